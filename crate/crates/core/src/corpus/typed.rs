use crate::error::{Error, Result};
use crate::kb::{EntityId, EntitySpan, KnowledgeBase, TypeId};

/// Token used in place of an entity of the given type.
pub fn type_token(ty: &TypeId) -> String {
    format!("<{ty}>")
}

/// Token used for a relation inside the common-word vocabulary.
pub fn relation_token(rel: &str) -> String {
    format!("<rel:{rel}>")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSpan {
    pub start: usize,
    pub end: usize,
    pub entity: EntityId,
    pub original: Vec<String>,
}

/// A token sequence where every entity span was collapsed into its type token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedSequence {
    pub tokens: Vec<String>,
    /// One entry per typed position: the span it replaced, if any.
    pub alignment: Vec<Option<AlignedSpan>>,
}

impl TypedSequence {
    /// Re-expands type tokens into the original span tokens.
    pub fn restore(&self) -> Vec<String> {
        self.tokens
            .iter()
            .zip(&self.alignment)
            .flat_map(|(tok, al)| match al {
                Some(span) => span.original.clone(),
                None => vec![tok.clone()],
            })
            .collect()
    }

    pub fn entity_at(&self, pos: usize) -> Option<&EntityId> {
        self.alignment.get(pos)?.as_ref().map(|s| &s.entity)
    }
}

/// Replaces each annotated entity span by the token of the entity's type.
pub fn substitute_types(
    tokens: &[String],
    spans: &[EntitySpan],
    kb: &KnowledgeBase,
) -> Result<TypedSequence> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    let mut out = TypedSequence {
        tokens: Vec::with_capacity(tokens.len()),
        alignment: Vec::with_capacity(tokens.len()),
    };
    let mut i = 0;
    for span in sorted {
        if span.start < i || span.start >= span.end || span.end > tokens.len() {
            return Err(Error::Validation(format!(
                "invalid span [{}, {}) for entity {} over {} tokens",
                span.start,
                span.end,
                span.entity,
                tokens.len()
            )));
        }
        let entity = kb
            .entity(&span.entity)
            .ok_or_else(|| Error::Validation(format!("span references unknown entity {}", span.entity)))?;
        for tok in &tokens[i..span.start] {
            out.tokens.push(tok.clone());
            out.alignment.push(None);
        }
        out.tokens.push(type_token(&entity.entity_type));
        out.alignment.push(Some(AlignedSpan {
            start: span.start,
            end: span.end,
            entity: span.entity.clone(),
            original: tokens[span.start..span.end].to_vec(),
        }));
        i = span.end;
    }
    for tok in &tokens[i..] {
        out.tokens.push(tok.clone());
        out.alignment.push(None);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize::tokenize;

    fn kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        kb.add_entity("jay", "Person", vec![tokenize("jay chou")]).unwrap();
        kb.add_entity("qinghuaci", "Song", vec![tokenize("qing hua ci")]).unwrap();
        kb
    }

    fn span(start: usize, end: usize, id: &str) -> EntitySpan {
        EntitySpan {
            start,
            end,
            entity: id.into(),
        }
    }

    #[test]
    fn replaces_span_with_type() {
        let toks = tokenize("recommend songs of jay chou");
        let typed = substitute_types(&toks, &[span(3, 5, "jay")], &kb()).unwrap();
        assert_eq!(typed.tokens, vec!["recommend", "songs", "of", "<Person>"]);
        assert_eq!(typed.restore(), toks);
        assert_eq!(typed.entity_at(3).unwrap().as_str(), "jay");
    }

    #[test]
    fn identity_without_spans() {
        let toks = tokenize("hello there");
        let typed = substitute_types(&toks, &[], &kb()).unwrap();
        assert_eq!(typed.tokens, toks);
        assert!(typed.alignment.iter().all(Option::is_none));
    }

    #[test]
    fn adjacent_spans_keep_order() {
        let toks = tokenize("qing hua ci jay chou");
        let typed = substitute_types(&toks, &[span(3, 5, "jay"), span(0, 3, "qinghuaci")], &kb()).unwrap();
        assert_eq!(typed.tokens, vec!["<Song>", "<Person>"]);
        assert_eq!(typed.restore(), toks);
    }

    #[test]
    fn rejects_unknown_entity_and_bad_span() {
        let toks = tokenize("a b c");
        assert!(substitute_types(&toks, &[span(0, 1, "nobody")], &kb()).is_err());
        assert!(substitute_types(&toks, &[span(2, 5, "jay")], &kb()).is_err());
        assert!(substitute_types(&toks, &[span(0, 2, "jay"), span(1, 3, "jay")], &kb()).is_err());
    }
}
