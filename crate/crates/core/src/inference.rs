//! Response generation: retrieval, encoding and step-wise mixed decoding.

use serde::Serialize;

use crate::corpus::vocab::EOS_ID;
use crate::corpus::{detokenize, tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::features::{prepare_raw, PreparedMessage};
use crate::kb::{EntityId, KnowledgeBase, RelationId, TypeId};
use crate::model::{DecodeState, Emitted, Graph, MessageContext, Model, StepNodes};
use crate::training::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    pub max_len: usize,
    /// Never emit the same entity twice in one response.
    pub no_repeat_entity: bool,
    /// Keep only this many candidates, those with the highest matching score.
    pub max_candidates: Option<usize>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            max_len: 30,
            no_repeat_entity: false,
            max_candidates: Some(512),
        }
    }
}

/// Model quantities of one decode step, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub gate: f64,
    pub p_e: Vec<f64>,
    pub u: Vec<f64>,
    pub f: Vec<f64>,
}

/// Raw decoder output over `V_C` indices and candidate indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub items: Vec<Emitted>,
    pub score: f64,
    /// Matching score of each candidate.
    pub r: Vec<f64>,
    pub steps: Vec<StepTrace>,
}

impl Decoded {
    pub fn gate_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.gate).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityEmission {
    /// Index of the first surface token in `tokens`.
    pub position: usize,
    pub entity: EntityId,
    pub entity_type: TypeId,
    pub predicate: RelationId,
    pub surface: String,
    pub candidate: usize,
    pub p_e: f64,
    pub gate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationResult {
    pub tokens: Vec<String>,
    pub entity_emissions: Vec<EntityEmission>,
    pub gate_trace: Vec<f64>,
    pub score: f64,
}

impl GenerationResult {
    pub fn text(&self) -> String {
        detokenize(&self.tokens)
    }

    pub fn entities(&self) -> Vec<EntityId> {
        self.entity_emissions.iter().map(|e| e.entity.clone()).collect()
    }
}

/// Log-probability of every item at a step: `V_C` first, then candidates.
fn item_scores(g: &Graph, step: &StepNodes) -> Vec<f64> {
    let log_not = step.log_not_gate.map_or(0.0, |n| g.scalar(n));
    let mut out: Vec<f64> = g.value(step.log_pc).iter().map(|lp| lp + log_not).collect();
    if let (Some(lpe), Some(lg)) = (step.log_pe, step.log_gate) {
        let lg = g.scalar(lg);
        out.extend(g.value(lpe).iter().map(|lp| lp + lg));
    }
    out
}

fn item_at(idx: usize, n_common: usize) -> Emitted {
    if idx < n_common {
        Emitted::Common(idx)
    } else {
        Emitted::Candidate(idx - n_common)
    }
}

fn trace(g: &Graph, step: &StepNodes) -> StepTrace {
    let exp_all = |nodes: &[crate::model::NodeId]| nodes.iter().map(|&n| g.scalar(n).exp()).collect();
    StepTrace {
        gate: step.log_gate.map_or(0.0, |n| g.scalar(n).exp()),
        p_e: step.log_pe.map_or_else(Vec::new, |n| g.value(n).iter().map(|x| x.exp()).collect()),
        u: exp_all(&step.log_u),
        f: exp_all(&step.log_f),
    }
}

fn blocked(ctx: &MessageContext, state: &DecodeState, item: Emitted, opts: &DecodeOptions) -> bool {
    match item {
        Emitted::Candidate(k) => opts.no_repeat_entity && state.emitted_keys.contains(&ctx.candidates[k].entity_key),
        Emitted::Common(_) => false,
    }
}

#[derive(Clone)]
struct Hypothesis {
    state: DecodeState,
    items: Vec<Emitted>,
    steps: Vec<StepTrace>,
    score: f64,
    done: bool,
}

fn greedy(model: &Model, g: &mut Graph, ctx: &MessageContext, opts: &DecodeOptions) -> Hypothesis {
    let mut hyp = Hypothesis {
        state: model.initial_state(ctx),
        items: Vec::new(),
        steps: Vec::new(),
        score: 0.0,
        done: false,
    };
    while !hyp.done && hyp.items.len() < opts.max_len {
        let step = model.step(g, ctx, &hyp.state);
        let scores = item_scores(g, &step);
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in scores.iter().enumerate() {
            if blocked(ctx, &hyp.state, item_at(i, model.n_common()), opts) {
                continue;
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (idx, s) = best.expect("common words are never blocked");
        let item = item_at(idx, model.n_common());
        hyp.steps.push(trace(g, &step));
        hyp.score += s;
        hyp.state = model.advance(ctx, &hyp.state, &step, item);
        hyp.items.push(item);
        hyp.done = item == Emitted::Common(EOS_ID);
    }
    hyp
}

fn beam(model: &Model, g: &mut Graph, ctx: &MessageContext, opts: &DecodeOptions, width: usize) -> Hypothesis {
    let mut beams = vec![Hypothesis {
        state: model.initial_state(ctx),
        items: Vec::new(),
        steps: Vec::new(),
        score: 0.0,
        done: false,
    }];
    for _ in 0..opts.max_len {
        if beams.iter().all(|h| h.done) {
            break;
        }
        // (score, beam index, item index); finished beams carry over as item usize::MAX
        let mut expansions: Vec<(f64, usize, usize)> = Vec::new();
        let mut step_nodes = Vec::with_capacity(beams.len());
        for (b, hyp) in beams.iter().enumerate() {
            if hyp.done {
                expansions.push((hyp.score, b, usize::MAX));
                step_nodes.push(None);
                continue;
            }
            let step = model.step(g, ctx, &hyp.state);
            let scores = item_scores(g, &step);
            let mut local: Vec<(f64, usize, usize)> = scores
                .iter()
                .enumerate()
                .filter(|(i, _)| !blocked(ctx, &hyp.state, item_at(*i, model.n_common()), opts))
                .map(|(i, s)| (hyp.score + s, b, i))
                .collect();
            local.sort_by(|a, b| b.0.total_cmp(&a.0));
            local.truncate(width);
            expansions.extend(local);
            step_nodes.push(Some(step));
        }
        expansions.sort_by(|a, b| b.0.total_cmp(&a.0));
        expansions.truncate(width);
        beams = expansions
            .into_iter()
            .map(|(score, b, i)| {
                let parent = &beams[b];
                let Some(step) = &step_nodes[b] else {
                    return parent.clone();
                };
                let item = item_at(i, model.n_common());
                let mut steps = parent.steps.clone();
                steps.push(trace(g, step));
                let mut items = parent.items.clone();
                items.push(item);
                Hypothesis {
                    state: model.advance(ctx, &parent.state, step, item),
                    items,
                    steps,
                    score,
                    done: item == Emitted::Common(EOS_ID),
                }
            })
            .collect();
    }
    beams
        .into_iter()
        .reduce(|best, h| match (h.done, best.done) {
            (true, false) => h,
            (a, b) if a == b && h.score > best.score => h,
            _ => best,
        })
        .expect("beam is never empty")
}

/// Keeps the `cap` candidates with the highest matching score, in their
/// original order.
fn cap_candidates(model: &Model, prepared: &mut PreparedMessage, cap: usize) -> Result<()> {
    if prepared.features.len() <= cap {
        return Ok(());
    }
    let mut g = Graph::new(&model.store);
    let ctx = model.prepare(&mut g, &prepared.token_ids, &prepared.features)?;
    let r: Vec<f64> = ctx.log_r.iter().map(|&n| g.scalar(n)).collect();
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]));
    let mut keep: Vec<usize> = order[..cap].to_vec();
    keep.sort_unstable();
    let cands: Vec<_> = keep.iter().map(|&i| prepared.candidates.candidates[i].clone()).collect();
    let mut feats: Vec<_> = keep.iter().map(|&i| prepared.features[i]).collect();
    for (i, f) in feats.iter_mut().enumerate() {
        f.entity_key = cands.iter().position(|c| c.entity == cands[i].entity).unwrap_or(i);
    }
    prepared.candidates.candidates = cands;
    prepared.features = feats;
    Ok(())
}

/// Decodes a featurized message.
pub fn decode(model: &Model, prepared: &PreparedMessage, opts: &DecodeOptions) -> Result<Decoded> {
    if opts.max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut g = Graph::new(&model.store);
    let ctx = model.prepare(&mut g, &prepared.token_ids, &prepared.features)?;
    let r = ctx.log_r.iter().map(|&n| g.scalar(n).exp()).collect();
    let hyp = match opts.mode {
        DecodeMode::Greedy => greedy(model, &mut g, &ctx, opts),
        DecodeMode::Beam(0) => return Err(Error::Config("beam width must be at least 1".into())),
        DecodeMode::Beam(w) => {
            let b = beam(model, &mut g, &ctx, opts, w);
            let gr = greedy(model, &mut g, &ctx, opts);
            if gr.score > b.score {
                gr
            } else {
                b
            }
        }
    };
    Ok(Decoded {
        items: hyp.items,
        score: hyp.score,
        r,
        steps: hyp.steps,
    })
}

/// A loaded model with its vocabulary and knowledge base. Immutable and
/// safe to share between threads.
#[derive(Debug, Clone)]
pub struct Engine {
    pub model: Model,
    pub vocab: Vocabulary,
    pub kb: KnowledgeBase,
}

impl Engine {
    pub fn new(model: Model, vocab: Vocabulary, kb: KnowledgeBase) -> Result<Self> {
        if vocab.common_len() != model.n_common() {
            return Err(Error::Validation(format!(
                "vocabulary has {} common words but the model expects {}",
                vocab.common_len(),
                model.n_common()
            )));
        }
        vocab.check_covers(&kb)?;
        Ok(Self { model, vocab, kb })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, kb: KnowledgeBase) -> Result<Self> {
        let vocab = ckpt.vocabulary(&kb)?;
        Self::new(ckpt.model, vocab, kb)
    }

    /// Same model over another knowledge base. New entities are fine; new
    /// types or relations are rejected since they have no embedding.
    pub fn with_kb(&self, kb: KnowledgeBase) -> Result<Self> {
        let vocab = Vocabulary::from_common_words(self.vocab.common_words().to_vec(), &kb)?;
        Self::new(self.model.clone(), vocab, kb)
    }

    pub fn prepare(&self, tokens: &[String], opts: &DecodeOptions) -> Result<PreparedMessage> {
        let mut prepared = prepare_raw(tokens, &self.kb, &self.vocab)?;
        if let Some(cap) = opts.max_candidates {
            cap_candidates(&self.model, &mut prepared, cap)?;
        }
        Ok(prepared)
    }

    pub fn generate(&self, message: &str, opts: &DecodeOptions) -> Result<GenerationResult> {
        self.generate_tokens(&tokenize(message), opts)
    }

    pub fn generate_tokens(&self, tokens: &[String], opts: &DecodeOptions) -> Result<GenerationResult> {
        let prepared = self.prepare(tokens, opts)?;
        let decoded = decode(&self.model, &prepared, opts)?;
        self.realize(&prepared, &decoded)
    }

    /// Turns decoder items into surface tokens; candidates use their first
    /// surface form. The final `<eos>` is dropped.
    pub fn realize(&self, prepared: &PreparedMessage, decoded: &Decoded) -> Result<GenerationResult> {
        let mut tokens = Vec::new();
        let mut emissions = Vec::new();
        for (t, item) in decoded.items.iter().enumerate() {
            match *item {
                Emitted::Common(EOS_ID) => break,
                Emitted::Common(w) => tokens.push(self.vocab.common_word(w).to_string()),
                Emitted::Candidate(k) => {
                    let cand = &prepared.candidates.candidates[k];
                    let entity = self
                        .kb
                        .entity(&cand.entity)
                        .ok_or_else(|| Error::Internal(format!("candidate {} not in KB", cand.entity)))?;
                    let surface = entity
                        .surface_forms
                        .first()
                        .ok_or_else(|| Error::Validation(format!("entity {} has no surface form", cand.entity)))?;
                    emissions.push(EntityEmission {
                        position: tokens.len(),
                        entity: cand.entity.clone(),
                        entity_type: cand.entity_type.clone(),
                        predicate: cand.predicate.clone(),
                        surface: detokenize(surface),
                        candidate: k,
                        p_e: decoded.steps[t].p_e[k],
                        gate: decoded.steps[t].gate,
                    });
                    tokens.extend(surface.iter().cloned());
                }
            }
        }
        Ok(GenerationResult {
            tokens,
            entity_emissions: emissions,
            gate_trace: decoded.gate_trace(),
            score: decoded.score,
        })
    }
}
