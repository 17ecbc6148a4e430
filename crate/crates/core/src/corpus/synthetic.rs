//! Seeded music-domain corpus generator.
//!
//! The world is made of blocks of six entities: a singer, three songs, an
//! album and a release year. Every singer sings its three songs; songs
//! belong to the album and the album has a release year (optional facts,
//! filled in block order until the requested fact count is reached).
//! Dialogues come from fixed templates: multi-entity recommendations,
//! single-fact questions and entity-free chit-chat.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::dataset::{DialoguePair, Dataset};
use crate::corpus::tokenize::tokenize;
use crate::error::{Error, Result};
use crate::kb::{EntityId, EntitySpan, FactTriple, KnowledgeBase};

pub const PERSON: &str = "Person";
pub const SONG: &str = "Song";
pub const ALBUM: &str = "Album";
pub const YEAR: &str = "Year";
pub const SING: &str = "sing";
pub const ALBUM_OF: &str = "album_of";
pub const RELEASE_YEAR: &str = "release_year";

pub const ENTITIES_PER_BLOCK: usize = 6;
pub const SONGS_PER_SINGER: usize = 3;
const MANDATORY_FACTS: usize = SONGS_PER_SINGER;
const MAX_FACTS: usize = 2 * SONGS_PER_SINGER + 1;

const RECOMMEND_MESSAGES: &[&str] = &[
    "i like {P} 's music . any recommendation ?",
    "recommend me some songs of {P} .",
    "what songs has {P} sung ?",
];
const RECOMMEND_RESPONSE: &str = "you can try {S1} , {S2} and {S3} .";
const WHO_SINGS: (&str, &str) = ("who sings {S} ?", "it is sung by {P} .");
const WHICH_ALBUM: (&str, &str) = ("which album is {S} on ?", "it is on {A} .");
const WHEN_RELEASED: (&str, &str) = ("when was {A} released ?", "it came out in {Y} .");
const ENTITY_CHAT: (&str, &str) = ("{P} is really great", "yes , i hope this singer can sing more songs .");
const CHIT_CHAT: &[(&str, &str)] = &[
    ("hello there", "hi , nice to meet you ."),
    ("how are you today ?", "i am fine , thanks ."),
    ("do you like music ?", "yes , music makes me happy ."),
    ("thank you so much", "you are welcome ."),
    ("good night", "good night , sleep well ."),
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// One generated singer block.
#[derive(Debug, Clone)]
pub struct Block {
    pub person: EntityId,
    pub songs: Vec<EntityId>,
    pub album: EntityId,
    pub year: EntityId,
    /// Songs `0..album_facts` carry an `album_of` fact.
    pub album_facts: usize,
    pub has_year_fact: bool,
}

struct Generator {
    rng: ChaCha8Rng,
    used_tokens: HashSet<String>,
}

impl Generator {
    fn new(seed: u64, reserved: impl IntoIterator<Item = String>) -> Self {
        let mut used_tokens: HashSet<String> = reserved.into_iter().collect();
        for (m, r) in CHIT_CHAT
            .iter()
            .chain([&WHO_SINGS, &WHICH_ALBUM, &WHEN_RELEASED, &ENTITY_CHAT])
        {
            used_tokens.extend(tokenize(m));
            used_tokens.extend(tokenize(r));
        }
        for m in RECOMMEND_MESSAGES.iter().chain([&RECOMMEND_RESPONSE]) {
            used_tokens.extend(tokenize(m));
        }
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used_tokens,
        }
    }

    fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| {
                    format!(
                        "{}{}",
                        ONSETS.choose(&mut self.rng).unwrap(),
                        VOWELS.choose(&mut self.rng).unwrap()
                    )
                })
                .collect();
            if self.used_tokens.insert(w.clone()) {
                return w;
            }
        }
    }

    fn name(&mut self, min: usize, max: usize) -> Vec<String> {
        let n = self.rng.gen_range(min..=max);
        (0..n).map(|_| self.word()).collect()
    }

    fn add_block(&mut self, kb: &mut KnowledgeBase, tag: &str, year: usize) -> Result<Block> {
        let person = EntityId(format!("person_{tag}"));
        kb.add_entity(person.0.clone(), PERSON, vec![self.name(2, 2)])?;
        let mut songs = Vec::with_capacity(SONGS_PER_SINGER);
        for k in 0..SONGS_PER_SINGER {
            let id = EntityId(format!("song_{tag}_{k}"));
            kb.add_entity(id.0.clone(), SONG, vec![self.name(1, 3)])?;
            songs.push(id);
        }
        let album = EntityId(format!("album_{tag}"));
        kb.add_entity(album.0.clone(), ALBUM, vec![self.name(2, 2)])?;
        let year_id = EntityId(format!("year_{tag}"));
        kb.add_entity(year_id.0.clone(), YEAR, vec![vec![year.to_string()]])?;
        Ok(Block {
            person,
            songs,
            album,
            year: year_id,
            album_facts: 0,
            has_year_fact: false,
        })
    }
}

fn register_relations(kb: &mut KnowledgeBase) {
    for r in [SING, ALBUM_OF, RELEASE_YEAR] {
        kb.add_relation(r);
    }
}

fn add_sing_facts(kb: &mut KnowledgeBase, b: &Block) -> Result<()> {
    for s in &b.songs {
        kb.add_fact(FactTriple::new(b.person.as_str(), SING, s.as_str()))?;
    }
    Ok(())
}

fn add_album_facts(kb: &mut KnowledgeBase, b: &mut Block, n: usize) -> Result<()> {
    for s in &b.songs[..n] {
        kb.add_fact(FactTriple::new(s.as_str(), ALBUM_OF, b.album.as_str()))?;
    }
    b.album_facts = n;
    Ok(())
}

fn add_year_fact(kb: &mut KnowledgeBase, b: &mut Block) -> Result<()> {
    kb.add_fact(FactTriple::new(b.album.as_str(), RELEASE_YEAR, b.year.as_str()))?;
    b.has_year_fact = true;
    Ok(())
}

/// Fills `{P}`, `{S}`, `{S1}`… placeholders and records the entity spans.
fn render(template: &str, slots: &[(&str, &EntityId)], kb: &KnowledgeBase) -> (String, Vec<String>, Vec<EntitySpan>) {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    for piece in template.split_whitespace() {
        match slots.iter().find(|(name, _)| *name == piece) {
            Some((_, id)) => {
                let surface = &kb.entity(id).expect("generated entity").surface_forms[0];
                spans.push(EntitySpan {
                    start: tokens.len(),
                    end: tokens.len() + surface.len(),
                    entity: (*id).clone(),
                });
                tokens.extend(surface.iter().cloned());
            }
            None => tokens.extend(tokenize(piece)),
        }
    }
    (tokens.join(" "), tokens, spans)
}

fn make_pair(
    kb: &KnowledgeBase,
    (message, response): (&str, &str),
    slots: &[(&str, &EntityId)],
    facts: Vec<FactTriple>,
) -> DialoguePair {
    let (m_text, m_tokens, m_spans) = render(message, slots, kb);
    let (r_text, r_tokens, r_spans) = render(response, slots, kb);
    DialoguePair {
        message: m_text,
        response: r_text,
        message_tokens: m_tokens,
        response_tokens: r_tokens,
        message_spans: m_spans,
        response_spans: r_spans,
        gold_facts: facts,
    }
}

fn recommendation(kb: &KnowledgeBase, b: &Block, variant: usize) -> DialoguePair {
    let slots = [
        ("{P}", &b.person),
        ("{S1}", &b.songs[0]),
        ("{S2}", &b.songs[1]),
        ("{S3}", &b.songs[2]),
    ];
    let facts = b
        .songs
        .iter()
        .map(|s| FactTriple::new(b.person.as_str(), SING, s.as_str()))
        .collect();
    let msg = RECOMMEND_MESSAGES[variant % RECOMMEND_MESSAGES.len()];
    make_pair(kb, (msg, RECOMMEND_RESPONSE), &slots, facts)
}

fn question(kb: &KnowledgeBase, b: &Block, rng: &mut ChaCha8Rng) -> DialoguePair {
    let song = b.songs.choose(rng).unwrap();
    let album_song = b.songs[..b.album_facts].choose(rng);
    let mut kinds = vec![0];
    if album_song.is_some() {
        kinds.push(1);
    }
    if b.has_year_fact {
        kinds.push(2);
    }
    match *kinds.choose(rng).unwrap() {
        0 => make_pair(
            kb,
            WHO_SINGS,
            &[("{S}", song), ("{P}", &b.person)],
            vec![FactTriple::new(b.person.as_str(), SING, song.as_str())],
        ),
        1 => make_pair(
            kb,
            WHICH_ALBUM,
            &[("{S}", album_song.unwrap()), ("{A}", &b.album)],
            vec![FactTriple::new(album_song.unwrap().as_str(), ALBUM_OF, b.album.as_str())],
        ),
        _ => make_pair(
            kb,
            WHEN_RELEASED,
            &[("{A}", &b.album), ("{Y}", &b.year)],
            vec![FactTriple::new(b.album.as_str(), RELEASE_YEAR, b.year.as_str())],
        ),
    }
}

/// Generates a KB and `n_pairs` dialogues. Roughly 40% of the responses are
/// three-entity recommendations, 30% single-fact answers and 30% carry no
/// entity at all.
pub fn make_synthetic_corpus(
    seed: u64,
    n_entities: usize,
    n_facts: usize,
    n_pairs: usize,
) -> Result<(KnowledgeBase, Dataset)> {
    let (kb, blocks) = make_synthetic_kb(seed, n_entities, n_facts)?;
    if n_pairs == 0 {
        return Err(Error::Validation("n_pairs must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1a1);
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let block = blocks.choose(&mut rng).unwrap();
        let pair = match i % 10 {
            0..=3 => recommendation(&kb, block, rng.gen_range(0..RECOMMEND_MESSAGES.len())),
            4..=6 => question(&kb, block, &mut rng),
            7 => make_pair(&kb, ENTITY_CHAT, &[("{P}", &block.person)], vec![]),
            _ => make_pair(&kb, *CHIT_CHAT.choose(&mut rng).unwrap(), &[], vec![]),
        };
        pairs.push(pair);
    }
    pairs.shuffle(&mut rng);
    Ok((kb, Dataset::new(pairs)))
}

/// The KB half of [`make_synthetic_corpus`], also returning the blocks.
pub fn make_synthetic_kb(seed: u64, n_entities: usize, n_facts: usize) -> Result<(KnowledgeBase, Vec<Block>)> {
    let n_blocks = n_entities / ENTITIES_PER_BLOCK;
    if n_blocks == 0 {
        return Err(Error::Validation(format!(
            "n_entities = {n_entities} is too small, need at least {ENTITIES_PER_BLOCK}"
        )));
    }
    let (lo, hi) = (n_blocks * MANDATORY_FACTS, n_blocks * MAX_FACTS);
    if n_facts < lo || n_facts > hi {
        return Err(Error::Validation(format!(
            "n_facts = {n_facts} inconsistent with n_entities = {n_entities}: expected {lo}..={hi}"
        )));
    }
    let mut gen = Generator::new(seed, []);
    let mut kb = KnowledgeBase::new();
    register_relations(&mut kb);
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let block = gen.add_block(&mut kb, &b.to_string(), 1950 + b)?;
        add_sing_facts(&mut kb, &block)?;
        blocks.push(block);
    }
    // leftover entities become singers without facts
    for extra in 0..n_entities % ENTITIES_PER_BLOCK {
        let name = gen.name(2, 2);
        kb.add_entity(format!("person_x{extra}"), PERSON, vec![name])?;
    }
    let mut remaining = n_facts - lo;
    for block in &mut blocks {
        let take = remaining.min(MAX_FACTS - MANDATORY_FACTS);
        add_album_facts(&mut kb, block, take.min(SONGS_PER_SINGER))?;
        if take > SONGS_PER_SINGER {
            add_year_fact(&mut kb, block)?;
        }
        remaining -= take;
    }
    debug_assert_eq!(remaining, 0);
    debug_assert_eq!(kb.num_facts(), n_facts);
    Ok((kb, blocks))
}

/// Appends `n_blocks` fresh singer blocks (full fact sets, existing types and
/// relations only) to `kb` and writes one recommendation query per new
/// singer and message template. None of these entities occur in any corpus
/// made by [`make_synthetic_corpus`].
pub fn make_unseen_extension(
    kb: &KnowledgeBase,
    seed: u64,
    n_blocks: usize,
) -> Result<(KnowledgeBase, Dataset)> {
    let reserved = kb
        .entities()
        .flat_map(|e| e.surface_forms.iter().flatten().cloned())
        .collect::<Vec<_>>();
    let mut gen = Generator::new(seed ^ 0x0dd_b10c, reserved);
    let mut ext = kb.clone();
    register_relations(&mut ext);
    let mut pairs = Vec::new();
    for b in 0..n_blocks {
        let mut block = gen.add_block(&mut ext, &format!("u{b}"), 3000 + b)?;
        add_sing_facts(&mut ext, &block)?;
        add_album_facts(&mut ext, &mut block, SONGS_PER_SINGER)?;
        add_year_fact(&mut ext, &mut block)?;
        for variant in 0..RECOMMEND_MESSAGES.len() {
            pairs.push(recommendation(&ext, &block, variant));
        }
    }
    Ok((ext, Dataset::new(pairs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let (kb1, d1) = make_synthetic_corpus(7, 60, 50, 100).unwrap();
        let (kb2, d2) = make_synthetic_corpus(7, 60, 50, 100).unwrap();
        let dump = |kb: &KnowledgeBase, d: &Dataset| {
            let mut buf = Vec::new();
            kb.write_jsonl(&mut buf).unwrap();
            d.write_jsonl(&mut buf).unwrap();
            buf
        };
        assert_eq!(dump(&kb1, &d1), dump(&kb2, &d2));
        let (kb3, d3) = make_synthetic_corpus(8, 60, 50, 100).unwrap();
        assert_ne!(dump(&kb1, &d1), dump(&kb3, &d3));
    }

    #[test]
    fn pairs_satisfy_annotation_invariants() {
        let (kb, ds) = make_synthetic_corpus(1, 60, 70, 100).unwrap();
        assert_eq!(ds.len(), 100);
        for p in &ds.pairs {
            p.validate(&kb).unwrap();
        }
    }

    #[test]
    fn entity_count_mix() {
        let (_, ds) = make_synthetic_corpus(3, 120, 100, 200).unwrap();
        let multi = ds.pairs.iter().filter(|p| p.response_spans.len() >= 2).count();
        let none = ds.pairs.iter().filter(|p| p.response_spans.is_empty()).count();
        assert!(multi * 5 >= ds.len(), "multi-entity share {multi}/200");
        assert!(none * 5 >= ds.len(), "entity-free share {none}/200");
    }

    #[test]
    fn gold_entities_reachable_from_message() {
        let (kb, ds) = make_synthetic_corpus(5, 90, 105, 150).unwrap();
        for p in &ds.pairs {
            let cands = kb.retrieve_facts(&p.message_entities()).unwrap();
            for e in p.response_entities() {
                assert!(cands.position_of(&e).is_some(), "{e} unreachable in {:?}", p.message);
            }
        }
    }

    #[test]
    fn fact_budget_is_validated() {
        assert!(make_synthetic_kb(0, 12, 5).is_err());
        assert!(make_synthetic_kb(0, 12, 15).is_err());
        assert!(make_synthetic_kb(0, 5, 3).is_err());
        for n in 6..=14 {
            let (kb, _) = make_synthetic_kb(0, 12, n).unwrap();
            assert_eq!(kb.num_facts(), n);
        }
    }

    #[test]
    fn extension_adds_only_new_entities() {
        let (kb, ds) = make_synthetic_corpus(2, 60, 70, 50).unwrap();
        let (ext, queries) = make_unseen_extension(&kb, 2, 4).unwrap();
        assert_eq!(ext.num_entities(), kb.num_entities() + 4 * ENTITIES_PER_BLOCK);
        assert_eq!(ext.relations(), kb.relations());
        assert_eq!(ext.entity_types(), kb.entity_types());
        let trained: HashSet<EntityId> = ds
            .pairs
            .iter()
            .flat_map(|p| p.message_entities().into_iter().chain(p.response_entities()))
            .collect();
        for q in &queries.pairs {
            q.validate(&ext).unwrap();
            for e in q.response_entities() {
                assert!(kb.entity(&e).is_none());
                assert!(!trained.contains(&e));
            }
            // detection on raw text finds the new singer
            let spans = ext.detect_entities(&q.message_tokens);
            assert_eq!(spans, q.message_spans);
        }
    }
}
