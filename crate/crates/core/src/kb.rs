//! Knowledge base storage, keyword entity detection and candidate fact retrieval.
//!
//! The KB is a set of `(subject, predicate, object)` triples over typed
//! entities. Entities are found in a message by greedy longest-match over
//! their normalized surface forms; the facts touching those entities form
//! the candidate set the decoder may draw knowledge words from.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize::tokenize;
use crate::error::{Error, Result};

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(EntityId);
string_id!(RelationId);
string_id!(TypeId);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactTriple {
    pub subject: EntityId,
    pub predicate: RelationId,
    pub object: EntityId,
}

impl FactTriple {
    pub fn new(s: impl Into<String>, p: impl Into<String>, o: impl Into<String>) -> Self {
        Self {
            subject: EntityId(s.into()),
            predicate: RelationId(p.into()),
            object: EntityId(o.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    /// Normalized (tokenized, lowercased) surface forms, first one is canonical.
    pub surface_forms: Vec<Vec<String>>,
    pub entity_type: TypeId,
}

/// A matched entity mention: token range `[start, end)` in the message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Object of a fact whose subject was mentioned.
    FromQsObject,
    /// Subject of a fact whose object was mentioned.
    FromQoSubject,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub entity: EntityId,
    pub entity_type: TypeId,
    pub predicate: RelationId,
    pub direction: Direction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateSet {
    pub facts_qs: Vec<FactTriple>,
    pub facts_qo: Vec<FactTriple>,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    /// Index of the first candidate for `entity`, if any.
    pub fn position_of(&self, entity: &EntityId) -> Option<usize> {
        self.candidates.iter().position(|c| &c.entity == entity)
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: BTreeMap<EntityId, Entity>,
    relations: BTreeSet<RelationId>,
    facts: Vec<FactTriple>,
    fact_set: HashSet<FactTriple>,
    subject_index: HashMap<EntityId, Vec<usize>>,
    object_index: HashMap<EntityId, Vec<usize>>,
    // surface form -> entity ids carrying it; lookups take the lowest id
    surface_index: HashMap<Vec<String>, BTreeSet<EntityId>>,
    max_surface_len: usize,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum KbRecord {
    Entity {
        id: String,
        #[serde(rename = "type")]
        entity_type: String,
        surface: Vec<Vec<String>>,
    },
    Relation {
        id: String,
    },
    Fact {
        s: String,
        p: String,
        o: String,
    },
}

/// Counts reported after loading a KB file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadStats {
    pub entities: usize,
    pub relations: usize,
    pub facts: usize,
    pub duplicate_facts: usize,
}

fn normalize_surface(form: &[String]) -> Vec<String> {
    tokenize(&form.join(" "))
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(
        &mut self,
        id: impl Into<String>,
        entity_type: impl Into<String>,
        surface_forms: Vec<Vec<String>>,
    ) -> Result<()> {
        let id = EntityId(id.into());
        if self.entities.contains_key(&id) {
            return Err(Error::Validation(format!("duplicate entity id {id}")));
        }
        if surface_forms.is_empty() {
            return Err(Error::Validation(format!("entity {id} has no surface form")));
        }
        let mut forms = Vec::with_capacity(surface_forms.len());
        for form in &surface_forms {
            let norm = normalize_surface(form);
            if norm.is_empty() {
                return Err(Error::Validation(format!("entity {id} has an empty surface form")));
            }
            forms.push(norm);
        }
        for form in &forms {
            self.max_surface_len = self.max_surface_len.max(form.len());
            self.surface_index
                .entry(form.clone())
                .or_default()
                .insert(id.clone());
        }
        self.entities.insert(
            id.clone(),
            Entity {
                id,
                surface_forms: forms,
                entity_type: TypeId(entity_type.into()),
            },
        );
        Ok(())
    }

    pub fn add_relation(&mut self, id: impl Into<String>) {
        self.relations.insert(RelationId(id.into()));
    }

    /// Adds a fact; returns `Ok(false)` if it was already present.
    pub fn add_fact(&mut self, fact: FactTriple) -> Result<bool> {
        if !self.entities.contains_key(&fact.subject) {
            return Err(Error::Validation(format!(
                "fact references unregistered subject entity {}",
                fact.subject
            )));
        }
        if !self.entities.contains_key(&fact.object) {
            return Err(Error::Validation(format!(
                "fact references unregistered object entity {}",
                fact.object
            )));
        }
        if !self.relations.contains(&fact.predicate) {
            return Err(Error::Validation(format!(
                "fact references unregistered relation {}",
                fact.predicate
            )));
        }
        if self.fact_set.contains(&fact) {
            return Ok(false);
        }
        let idx = self.facts.len();
        self.subject_index
            .entry(fact.subject.clone())
            .or_default()
            .push(idx);
        self.object_index
            .entry(fact.object.clone())
            .or_default()
            .push(idx);
        self.fact_set.insert(fact.clone());
        self.facts.push(fact);
        Ok(true)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, LoadStats)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut kb = KnowledgeBase::new();
        let mut stats = LoadStats::default();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line_no = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: KbRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e))?;
            let at_line = |e: Error| match e {
                Error::Validation(msg) => Error::Validation(format!("line {line_no}: {msg}")),
                other => other,
            };
            match record {
                KbRecord::Entity {
                    id,
                    entity_type,
                    surface,
                } => kb.add_entity(id, entity_type, surface).map_err(at_line)?,
                KbRecord::Relation { id } => kb.add_relation(id),
                KbRecord::Fact { s, p, o } => {
                    if !kb.add_fact(FactTriple::new(s, p, o)).map_err(at_line)? {
                        stats.duplicate_facts += 1;
                    }
                }
            }
        }
        stats.entities = kb.entities.len();
        stats.relations = kb.relations.len();
        stats.facts = kb.facts.len();
        log::info!(
            "loaded KB {}: {} entities, {} relations, {} facts ({} duplicates dropped)",
            path.display(),
            stats.entities,
            stats.relations,
            stats.facts,
            stats.duplicate_facts
        );
        Ok((kb, stats))
    }

    /// Writes the KB in the line-delimited format accepted by [`KnowledgeBase::load`].
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in self.entities.values() {
            let rec = KbRecord::Entity {
                id: e.id.0.clone(),
                entity_type: e.entity_type.0.clone(),
                surface: e.surface_forms.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
        for r in &self.relations {
            writeln!(out, "{}", serde_json::to_string(&KbRecord::Relation { id: r.0.clone() })?)?;
        }
        for f in &self.facts {
            let rec = KbRecord::Fact {
                s: f.subject.0.clone(),
                p: f.predicate.0.clone(),
                o: f.object.0.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn relations(&self) -> &BTreeSet<RelationId> {
        &self.relations
    }

    /// The entity-type list, derived from registered entities.
    pub fn entity_types(&self) -> BTreeSet<TypeId> {
        self.entities.values().map(|e| e.entity_type.clone()).collect()
    }

    pub fn facts(&self) -> &[FactTriple] {
        &self.facts
    }

    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn contains_fact(&self, fact: &FactTriple) -> bool {
        self.fact_set.contains(fact)
    }

    pub fn facts_with_subject(&self, id: &EntityId) -> &[usize] {
        self.subject_index.get(id).map_or(&[], Vec::as_slice)
    }

    pub fn facts_with_object(&self, id: &EntityId) -> &[usize] {
        self.object_index.get(id).map_or(&[], Vec::as_slice)
    }

    /// Entity registered under exactly this normalized surface form.
    pub fn lookup_surface(&self, tokens: &[String]) -> Option<&EntityId> {
        self.surface_index.get(tokens).and_then(|ids| ids.iter().next())
    }

    /// Entities having a surface form whose joined text starts with `prefix`
    /// (case-insensitive), sorted by id.
    pub fn entities_with_prefix(&self, prefix: &str) -> Vec<&Entity> {
        let prefix = prefix.to_lowercase();
        self.entities
            .values()
            .filter(|e| {
                e.surface_forms
                    .iter()
                    .any(|f| f.join(" ").starts_with(&prefix))
            })
            .collect()
    }

    /// Greedy left-to-right longest-match scan of `tokens` against the
    /// surface index. Spans never overlap.
    pub fn detect_entities(&self, tokens: &[String]) -> Vec<EntitySpan> {
        let norm: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < norm.len() {
            let longest = self.max_surface_len.min(norm.len() - i);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.lookup_surface(&norm[i..i + len]).map(|id| (len, id)));
            match hit {
                Some((len, id)) => {
                    spans.push(EntitySpan {
                        start: i,
                        end: i + len,
                        entity: id.clone(),
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        spans
    }

    /// Collects the facts whose subject or object is among `entities` and
    /// turns them into decoder candidates.
    pub fn retrieve_facts(&self, entities: &[EntityId]) -> Result<CandidateSet> {
        for id in entities {
            if !self.entities.contains_key(id) {
                return Err(Error::Validation(format!("unregistered entity id {id}")));
            }
        }
        let wanted: BTreeSet<&EntityId> = entities.iter().collect();
        let collect = |index: &HashMap<EntityId, Vec<usize>>| -> Vec<usize> {
            let mut idx: Vec<usize> = wanted
                .iter()
                .filter_map(|e| index.get(*e))
                .flatten()
                .copied()
                .collect();
            idx.sort_unstable();
            idx.dedup();
            idx
        };
        let qs = collect(&self.subject_index);
        let qo = collect(&self.object_index);

        let mut out = CandidateSet {
            facts_qs: qs.iter().map(|&i| self.facts[i].clone()).collect(),
            facts_qo: qo.iter().map(|&i| self.facts[i].clone()).collect(),
            candidates: Vec::new(),
        };
        let mut seen = HashSet::new();
        let from_qs = out
            .facts_qs
            .iter()
            .map(|f| (&f.object, &f.predicate, Direction::FromQsObject));
        let from_qo = out
            .facts_qo
            .iter()
            .map(|f| (&f.subject, &f.predicate, Direction::FromQoSubject));
        for (entity, predicate, direction) in from_qs.chain(from_qo) {
            if !seen.insert((entity.clone(), predicate.clone(), direction)) {
                continue;
            }
            let entity_type = self.entities[entity].entity_type.clone();
            out.candidates.push(Candidate {
                entity: entity.clone(),
                entity_type,
                predicate: predicate.clone(),
                direction,
            });
        }
        Ok(out)
    }

    /// Merges `other` into a copy of `self`. Entities already present must
    /// agree on type; facts are deduplicated.
    pub fn extended_with(&self, other: &KnowledgeBase) -> Result<KnowledgeBase> {
        let mut kb = self.clone();
        for r in &other.relations {
            kb.relations.insert(r.clone());
        }
        for e in other.entities.values() {
            match kb.entities.get(&e.id) {
                Some(existing) if existing.entity_type != e.entity_type => {
                    return Err(Error::Validation(format!(
                        "entity {} redeclared with type {} (was {})",
                        e.id, e.entity_type, existing.entity_type
                    )));
                }
                Some(_) => {}
                None => kb.add_entity(e.id.0.clone(), e.entity_type.0.clone(), e.surface_forms.clone())?,
            }
        }
        for f in &other.facts {
            kb.add_fact(f.clone())?;
        }
        Ok(kb)
    }
}
