use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::tokenize::tokenize;
use crate::error::{Error, Result};
use crate::kb::{EntityId, EntitySpan, FactTriple, KnowledgeBase};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialoguePair {
    pub message: String,
    pub response: String,
    pub message_tokens: Vec<String>,
    pub response_tokens: Vec<String>,
    pub message_spans: Vec<EntitySpan>,
    pub response_spans: Vec<EntitySpan>,
    pub gold_facts: Vec<FactTriple>,
}

impl DialoguePair {
    /// Gold response entities in order of appearance (with repetition).
    pub fn response_entities(&self) -> Vec<EntityId> {
        let mut spans: Vec<&EntitySpan> = self.response_spans.iter().collect();
        spans.sort_by_key(|s| s.start);
        spans.into_iter().map(|s| s.entity.clone()).collect()
    }

    pub fn message_entities(&self) -> Vec<EntityId> {
        self.message_spans.iter().map(|s| s.entity.clone()).collect()
    }

    /// Checks the annotation invariants against `kb`.
    pub fn validate(&self, kb: &KnowledgeBase) -> Result<()> {
        let sides = [
            ("message", &self.message_tokens, &self.message_spans),
            ("response", &self.response_tokens, &self.response_spans),
        ];
        for (side, tokens, spans) in sides {
            for span in spans.iter() {
                if span.start >= span.end || span.end > tokens.len() {
                    return Err(Error::Validation(format!(
                        "{side} span [{}, {}) out of range",
                        span.start, span.end
                    )));
                }
                let entity = kb.entity(&span.entity).ok_or_else(|| {
                    Error::Validation(format!("{side} span references unknown entity {}", span.entity))
                })?;
                let surface = &tokens[span.start..span.end];
                if !entity.surface_forms.iter().any(|f| f.as_slice() == surface) {
                    return Err(Error::Validation(format!(
                        "{side} span {:?} is not a surface form of {}",
                        surface.join(" "),
                        span.entity
                    )));
                }
            }
        }
        for fact in &self.gold_facts {
            if !kb.contains_fact(fact) {
                return Err(Error::Validation(format!(
                    "gold fact ({}, {}, {}) is not in the KB",
                    fact.subject, fact.predicate, fact.object
                )));
            }
            let mentioned = self
                .message_spans
                .iter()
                .chain(&self.response_spans)
                .any(|s| s.entity == fact.subject || s.entity == fact.object);
            if !mentioned {
                return Err(Error::Validation(format!(
                    "gold fact ({}, {}, {}) mentions no annotated entity",
                    fact.subject, fact.predicate, fact.object
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DialogueRecord {
    message: String,
    response: String,
    #[serde(default)]
    message_entities: Vec<(usize, usize, String)>,
    #[serde(default)]
    response_entities: Vec<(usize, usize, String)>,
    #[serde(default)]
    facts: Vec<(String, String, String)>,
}

fn to_spans(raw: Vec<(usize, usize, String)>) -> Vec<EntitySpan> {
    raw.into_iter()
        .map(|(start, end, id)| EntitySpan {
            start,
            end,
            entity: EntityId(id),
        })
        .collect()
}

fn from_spans(spans: &[EntitySpan]) -> Vec<(usize, usize, String)> {
    spans
        .iter()
        .map(|s| (s.start, s.end, s.entity.0.clone()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub pairs: Vec<DialoguePair>,
}

impl Dataset {
    pub fn new(pairs: Vec<DialoguePair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn load(path: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DialogueRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno + 1, e))?;
            let pair = DialoguePair {
                message_tokens: tokenize(&rec.message),
                response_tokens: tokenize(&rec.response),
                message: rec.message,
                response: rec.response,
                message_spans: to_spans(rec.message_entities),
                response_spans: to_spans(rec.response_entities),
                gold_facts: rec
                    .facts
                    .into_iter()
                    .map(|(s, p, o)| FactTriple::new(s, p, o))
                    .collect(),
            };
            pair.validate(kb)
                .map_err(|e| Error::parse(path, lineno + 1, e))?;
            pairs.push(pair);
        }
        Ok(Self { pairs })
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for p in &self.pairs {
            let rec = DialogueRecord {
                message: p.message.clone(),
                response: p.response.clone(),
                message_entities: from_spans(&p.message_spans),
                response_entities: from_spans(&p.response_spans),
                facts: p
                    .gold_facts
                    .iter()
                    .map(|f| (f.subject.0.clone(), f.predicate.0.clone(), f.object.0.clone()))
                    .collect(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Seeded random split; the first part gets `round(ratio * n)` pairs.
    pub fn split(&self, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!("split ratio {ratio} outside [0, 1]")));
        }
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (ratio * self.pairs.len() as f64).round() as usize;
        let pick = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| self.pairs[i].clone()).collect());
        Ok((pick(&order[..n_train]), pick(&order[n_train..])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| DialoguePair {
                    message: format!("m{i}"),
                    response: format!("r{i}"),
                    message_tokens: vec![format!("m{i}")],
                    response_tokens: vec![format!("r{i}")],
                    message_spans: vec![],
                    response_spans: vec![],
                    gold_facts: vec![],
                })
                .collect(),
        )
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = plain(10);
        let (train, test) = ds.split(0.8, 3).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let (train2, test2) = ds.split(0.8, 3).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        for p in &test.pairs {
            assert!(!train.pairs.contains(p));
        }
    }

    #[test]
    fn load_reports_line_of_bad_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"message\":\"hi\",\"response\":\"hello\"}\n{\"message\": 3}\n",
        )
        .unwrap();
        let err = Dataset::load(&path, &KnowledgeBase::new()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn load_rejects_span_that_is_not_a_surface_form() {
        let mut kb = KnowledgeBase::new();
        kb.add_entity("jay", "Person", vec![tokenize("jay chou")]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"message\":\"i like jay chou\",\"response\":\"ok\",\"message_entities\":[[1,3,\"jay\"]]}\n",
        )
        .unwrap();
        assert!(Dataset::load(&path, &kb).is_err());
        std::fs::write(
            &path,
            "{\"message\":\"i like jay chou\",\"response\":\"ok\",\"message_entities\":[[2,4,\"jay\"]]}\n",
        )
        .unwrap();
        let ds = Dataset::load(&path, &kb).unwrap();
        assert_eq!(ds.pairs[0].message_entities(), vec![EntityId::from("jay")]);
    }
}
