//! Turns a tokenized message into model inputs: the type-substituted token
//! ids, the retrieved candidates and their identity-free features.

use crate::corpus::typed::{substitute_types, TypedSequence};
use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::kb::{Candidate, CandidateSet, EntityId, EntitySpan, KnowledgeBase};
use crate::model::CandidateFeatures;

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedMessage {
    pub typed: TypedSequence,
    pub token_ids: Vec<usize>,
    pub candidates: CandidateSet,
    pub features: Vec<CandidateFeatures>,
}

impl PreparedMessage {
    /// Appends a candidate that retrieval did not produce and returns its index.
    pub fn push_candidate(&mut self, cand: Candidate, vocab: &Vocabulary) -> Result<usize> {
        let key = match self.candidates.position_of(&cand.entity) {
            Some(i) => self.features[i].entity_key,
            None => self.candidates.len(),
        };
        self.features.push(candidate_features(&cand, key, vocab)?);
        self.candidates.candidates.push(cand);
        Ok(self.candidates.len() - 1)
    }
}

fn candidate_features(c: &Candidate, entity_key: usize, vocab: &Vocabulary) -> Result<CandidateFeatures> {
    let type_idx = vocab
        .type_id(&c.entity_type)
        .ok_or_else(|| Error::Validation(format!("entity type {} is unknown to the model", c.entity_type)))?;
    let pred_idx = vocab
        .relation_id(&c.predicate)
        .ok_or_else(|| Error::Validation(format!("relation {} is unknown to the model", c.predicate)))?;
    Ok(CandidateFeatures {
        type_idx,
        pred_idx,
        entity_key,
    })
}

/// Featurizes a message whose entity spans are already known.
pub fn prepare_message(
    tokens: &[String],
    spans: &[EntitySpan],
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
) -> Result<PreparedMessage> {
    if tokens.is_empty() {
        return Err(Error::Input("message is empty".into()));
    }
    let typed = substitute_types(tokens, spans, kb)?;
    let token_ids = typed.tokens.iter().map(|t| vocab.common_id_or_unk(t)).collect();
    let mut mentioned: Vec<EntityId> = Vec::new();
    for s in spans {
        if !mentioned.contains(&s.entity) {
            mentioned.push(s.entity.clone());
        }
    }
    let candidates = kb.retrieve_facts(&mentioned)?;
    let mut features = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.candidates.iter().enumerate() {
        let key = candidates.position_of(&c.entity).unwrap_or(i);
        features.push(candidate_features(c, key, vocab)?);
    }
    Ok(PreparedMessage {
        typed,
        token_ids,
        candidates,
        features,
    })
}

/// Detects entities in `tokens` and featurizes the message.
pub fn prepare_raw(tokens: &[String], kb: &KnowledgeBase, vocab: &Vocabulary) -> Result<PreparedMessage> {
    let spans = kb.detect_entities(tokens);
    prepare_message(tokens, &spans, kb, vocab)
}
