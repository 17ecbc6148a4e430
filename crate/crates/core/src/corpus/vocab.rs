use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use crate::corpus::dataset::Dataset;
use crate::corpus::typed::{relation_token, substitute_types, type_token};
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, RelationId, TypeId};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// An item of the joint output space `V_C ⊎ V_E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Item {
    Common(usize),
    Entity(usize),
}

/// Common words `V_C` (control, type and relation tokens plus corpus words)
/// and knowledge words `V_E` (KB entities). The two index spaces never mix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    common: Vec<String>,
    common_index: HashMap<String, usize>,
    entities: Vec<EntityId>,
    entity_index: HashMap<EntityId, usize>,
}

impl Vocabulary {
    /// Builds `V_C` from an explicit word list (control tokens must come first)
    /// and `V_E` from the KB.
    pub fn from_common_words(common: Vec<String>, kb: &KnowledgeBase) -> Result<Self> {
        let expected = [PAD, BOS, EOS, UNK];
        if common.len() < expected.len() || common[..4] != expected {
            return Err(Error::Validation(
                "common vocabulary must start with <pad> <bos> <eos> <unk>".into(),
            ));
        }
        let mut common_index = HashMap::with_capacity(common.len());
        for (i, w) in common.iter().enumerate() {
            if common_index.insert(w.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate common word {w:?}")));
            }
        }
        let entities: Vec<EntityId> = kb.entities().map(|e| e.id.clone()).collect();
        let entity_index = entities.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
        Ok(Self {
            common,
            common_index,
            entities,
            entity_index,
        })
    }

    /// Counts common words over the type-substituted messages and responses.
    /// Words below `min_count` are left out (they map to `<unk>`); type and
    /// relation tokens are always included.
    pub fn build(dataset: &Dataset, kb: &KnowledgeBase, min_count: usize) -> Result<Self> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for pair in &dataset.pairs {
            for (tokens, spans) in [
                (&pair.message_tokens, &pair.message_spans),
                (&pair.response_tokens, &pair.response_spans),
            ] {
                let typed = substitute_types(tokens, spans, kb)?;
                for (tok, al) in typed.tokens.iter().zip(&typed.alignment) {
                    if al.is_none() {
                        *counts.entry(tok.clone()).or_default() += 1;
                    }
                }
            }
        }
        let mut common: Vec<String> = [PAD, BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        common.extend(kb.entity_types().iter().map(type_token));
        common.extend(kb.relations().iter().map(|r| relation_token(r.as_str())));
        let reserved: std::collections::HashSet<String> = common.iter().cloned().collect();
        common.extend(
            counts
                .into_iter()
                .filter(|(w, c)| *c >= min_count.max(1) && !reserved.contains(w))
                .map(|(w, _)| w),
        );
        Self::from_common_words(common, kb)
    }

    pub fn common_len(&self) -> usize {
        self.common.len()
    }

    pub fn entity_len(&self) -> usize {
        self.entities.len()
    }

    pub fn common_words(&self) -> &[String] {
        &self.common
    }

    pub fn common_word(&self, idx: usize) -> &str {
        &self.common[idx]
    }

    pub fn common_id(&self, word: &str) -> Option<usize> {
        self.common_index.get(word).copied()
    }

    /// Common-word index, `<unk>` for out-of-vocabulary words.
    pub fn common_id_or_unk(&self, word: &str) -> usize {
        self.common_id(word).unwrap_or(UNK_ID)
    }

    pub fn type_id(&self, ty: &TypeId) -> Option<usize> {
        self.common_id(&type_token(ty))
    }

    pub fn relation_id(&self, rel: &RelationId) -> Option<usize> {
        self.common_id(&relation_token(rel.as_str()))
    }

    pub fn entity_id(&self, entity: &EntityId) -> Option<usize> {
        self.entity_index.get(entity).copied()
    }

    pub fn entity(&self, idx: usize) -> &EntityId {
        &self.entities[idx]
    }

    /// Position of an item in the joint `V_C ⊎ V_E` index space.
    pub fn joint_index(&self, item: Item) -> usize {
        match item {
            Item::Common(i) => i,
            Item::Entity(j) => self.common.len() + j,
        }
    }

    /// SHA-256 over the common-word list; entities carry no parameters so
    /// they are not part of the hash.
    pub fn common_hash(&self) -> [u8; 32] {
        hash_words(&self.common)
    }

    /// Every entity type and relation of `kb` must have a `V_C` item.
    pub fn check_covers(&self, kb: &KnowledgeBase) -> Result<()> {
        for ty in kb.entity_types() {
            if self.type_id(&ty).is_none() {
                return Err(Error::Validation(format!(
                    "entity type {ty} has no embedding in the model vocabulary"
                )));
            }
        }
        for rel in kb.relations() {
            if self.relation_id(rel).is_none() {
                return Err(Error::Validation(format!(
                    "relation {rel} has no embedding in the model vocabulary"
                )));
            }
        }
        Ok(())
    }
}

/// SHA-256 over a word list, NUL-separated.
pub fn hash_words(words: &[String]) -> [u8; 32] {
    let mut h = Sha256::new();
    for w in words {
        h.update(w.as_bytes());
        h.update([0u8]);
    }
    h.finalize().into()
}
