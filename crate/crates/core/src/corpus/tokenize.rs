/// Lowercasing whitespace-and-punctuation tokenizer.
///
/// Alphanumeric runs form words. An apostrophe starts a clitic token that
/// absorbs the alphanumerics after it (`jay's` -> `jay`, `'s`). Any other
/// non-space character is a token on its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
    };
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else if ch == '\'' {
            flush(&mut cur, &mut tokens);
            cur.push(ch);
        } else {
            flush(&mut cur, &mut tokens);
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    flush(&mut cur, &mut tokens);
    tokens
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}
