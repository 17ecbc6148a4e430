//! Maps gold responses onto decoder labels over `V_C` and the candidate list.

use crate::corpus::typed::substitute_types;
use crate::corpus::vocab::{Vocabulary, EOS_ID};
use crate::corpus::DialoguePair;
use crate::error::{Error, Result};
use crate::features::{prepare_message, PreparedMessage};
use crate::kb::{Candidate, Direction, EntityId, KnowledgeBase};
use crate::model::{Emitted, Label};
use crate::training::config::AlignPolicy;

/// A pair ready for teacher forcing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub prepared: PreparedMessage,
    /// One label per typed response position, then `<eos>`.
    pub labels: Vec<Label>,
}

/// Picks the candidate for a gold entity: among candidates carrying the
/// entity, prefer a predicate that links it in `gold_facts`, else the
/// lowest index.
fn pick_candidate(pair: &DialoguePair, prepared: &PreparedMessage, entity: &EntityId) -> Option<usize> {
    let matching: Vec<usize> = prepared
        .candidates
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| &c.entity == entity)
        .map(|(i, _)| i)
        .collect();
    let in_gold = |i: &usize| {
        let c = &prepared.candidates.candidates[*i];
        pair.gold_facts
            .iter()
            .any(|f| f.predicate == c.predicate && (&f.subject == entity || &f.object == entity))
    };
    matching.iter().copied().find(in_gold).or_else(|| matching.first().copied())
}

/// Candidate built for a gold entity that retrieval missed, from the first
/// gold fact (or else KB fact) mentioning it.
fn injected_candidate(pair: &DialoguePair, kb: &KnowledgeBase, entity: &EntityId) -> Result<Candidate> {
    let ent = kb
        .entity(entity)
        .ok_or_else(|| Error::Validation(format!("unregistered entity id {entity}")))?;
    let fact = pair
        .gold_facts
        .iter()
        .chain(kb.facts())
        .find(|f| &f.subject == entity || &f.object == entity)
        .ok_or_else(|| Error::Validation(format!("entity {entity} takes part in no fact")))?;
    let direction = if &fact.object == entity {
        Direction::FromQsObject
    } else {
        Direction::FromQoSubject
    };
    Ok(Candidate {
        entity: entity.clone(),
        entity_type: ent.entity_type.clone(),
        predicate: fact.predicate.clone(),
        direction,
    })
}

/// Builds the labels of `pair`. Returns `Ok(None)` when the pair is skipped
/// under [`AlignPolicy::SkipPair`].
pub fn align_gold(
    pair: &DialoguePair,
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    policy: AlignPolicy,
) -> Result<Option<TrainingExample>> {
    let mut prepared = prepare_message(&pair.message_tokens, &pair.message_spans, kb, vocab)?;
    let typed = substitute_types(&pair.response_tokens, &pair.response_spans, kb)?;
    let mut labels = Vec::with_capacity(typed.tokens.len() + 1);
    for (pos, tok) in typed.tokens.iter().enumerate() {
        let typed_id = vocab.common_id_or_unk(tok);
        let item = match typed.entity_at(pos) {
            None => Emitted::Common(typed_id),
            Some(entity) => match pick_candidate(pair, &prepared, entity) {
                Some(k) => Emitted::Candidate(k),
                None => match policy {
                    AlignPolicy::Inject => {
                        let cand = injected_candidate(pair, kb, entity)?;
                        Emitted::Candidate(prepared.push_candidate(cand, vocab)?)
                    }
                    AlignPolicy::SkipPair => {
                        log::warn!("skipping pair {:?}: entity {entity} is not a candidate", pair.message);
                        return Ok(None);
                    }
                },
            },
        };
        labels.push(Label { item, typed: typed_id });
    }
    labels.push(Label {
        item: Emitted::Common(EOS_ID),
        typed: EOS_ID,
    });
    Ok(Some(TrainingExample { prepared, labels }))
}
