#![allow(dead_code)]

use gends::corpus::synthetic::make_synthetic_corpus;
use gends::corpus::{tokenize, Dataset, Vocabulary};
use gends::features::PreparedMessage;
use gends::inference::Engine;
use gends::kb::{EntitySpan, FactTriple, KnowledgeBase};
use gends::model::{Emitted, Graph, Model, ModelConfig, Variant};
use gends::training::{train, TrainingConfig};

/// The 200-pair synthetic corpus used throughout the tests.
pub fn corpus(seed: u64) -> (KnowledgeBase, Dataset) {
    make_synthetic_corpus(seed, 60, 50, 200).unwrap()
}

pub fn config(variant: Variant, d: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        variant,
        d_emb: d,
        d_h: d,
        seed,
        ..TrainingConfig::default()
    }
}

pub fn trained(ds: &Dataset, kb: &KnowledgeBase, cfg: &TrainingConfig) -> Engine {
    let out = train(ds, kb, cfg).unwrap();
    Engine::new(out.model, out.vocab, kb.clone()).unwrap()
}

/// Copy of `kb` where every surface token gets a `zq` prefix. Ids, types,
/// relations and facts are unchanged.
pub fn rename_surfaces(kb: &KnowledgeBase) -> KnowledgeBase {
    let mut out = KnowledgeBase::new();
    for r in kb.relations() {
        out.add_relation(r.as_str());
    }
    for e in kb.entities() {
        let forms = e
            .surface_forms
            .iter()
            .map(|f| f.iter().map(|t| format!("zq{t}")).collect())
            .collect();
        out.add_entity(e.id.as_str(), e.entity_type.as_str(), forms).unwrap();
    }
    for f in kb.facts() {
        out.add_fact(f.clone()).unwrap();
    }
    out
}

/// Re-renders `tokens` with the first surface form of each span's entity in `kb`.
pub fn rerender(tokens: &[String], spans: &[EntitySpan], kb: &KnowledgeBase) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    for s in sorted {
        out.extend_from_slice(&tokens[i..s.start]);
        out.extend(kb.entity(&s.entity).unwrap().surface_forms[0].iter().cloned());
        i = s.end;
    }
    out.extend_from_slice(&tokens[i..]);
    out
}

pub fn set(model: &mut Model, name: &str, row: usize, col: usize, value: f64) {
    let id = model.param(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = model.store.get_mut(id);
    let cols = t.cols;
    t.data[row * cols + col] = value;
}

/// Multiset intersection by repeated removal; slow and obviously right.
pub fn oracle_overlap<T: PartialEq + Clone>(a: &[T], b: &[T]) -> usize {
    let mut pool = b.to_vec();
    let mut hits = 0;
    for x in a {
        if let Some(i) = pool.iter().position(|y| y == x) {
            pool.remove(i);
            hits += 1;
        }
    }
    hits
}

pub fn oracle_bleu1(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let p = oracle_overlap(hyp, reference) as f64 / hyp.len() as f64;
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    p * bp
}

pub fn oracle_entity_metrics<T: PartialEq + Clone>(pred: &[T], gold: &[T]) -> (f64, f64) {
    let hit = oracle_overlap(pred, gold) as f64;
    let p = if pred.is_empty() { 0.0 } else { hit / pred.len() as f64 };
    let r = if gold.is_empty() { 0.0 } else { hit / gold.len() as f64 };
    (p, r)
}

/// Total probability mass of the output mixture at each of `steps` decode
/// steps, following items picked by `pick(step, n_items)`.
pub fn mixture_masses(
    model: &Model,
    prepared: &PreparedMessage,
    steps: usize,
    mut pick: impl FnMut(usize, usize) -> usize,
) -> Vec<f64> {
    let mut g = Graph::new(&model.store);
    let ctx = model.prepare(&mut g, &prepared.token_ids, &prepared.features).unwrap();
    let n_cands = ctx.candidates.len();
    let mut state = model.initial_state(&ctx);
    let mut out = Vec::new();
    for t in 0..steps {
        let step = model.step(&mut g, &ctx, &state);
        let items: Vec<Emitted> = (0..model.n_common())
            .map(Emitted::Common)
            .chain((0..n_cands).map(Emitted::Candidate))
            .collect();
        let mut mass = 0.0;
        for &item in &items {
            let lp = model.log_prob(&mut g, &step, item).unwrap();
            mass += g.scalar(lp).exp();
        }
        out.push(mass);
        let item = items[pick(t, items.len())];
        state = model.advance(&ctx, &state, &step, item);
    }
    out
}

pub const D: usize = 4;

pub fn small_kb() -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    kb.add_relation("sing");
    kb.add_relation("album_of");
    kb.add_entity("jay", "Person", vec![tokenize("jay")]).unwrap();
    kb.add_entity("rice", "Song", vec![tokenize("rice field")]).unwrap();
    kb.add_entity("sunny", "Song", vec![tokenize("sunny day")]).unwrap();
    kb.add_fact(FactTriple::new("jay", "sing", "rice")).unwrap();
    kb.add_fact(FactTriple::new("jay", "sing", "sunny")).unwrap();
    kb
}

pub fn small_vocab(kb: &KnowledgeBase) -> Vocabulary {
    let words = [
        "<pad>", "<bos>", "<eos>", "<unk>", "<Album>", "<Person>", "<Song>", "<rel:album_of>", "<rel:sing>", "songs", "of",
        "hello",
    ];
    Vocabulary::from_common_words(words.iter().map(|w| w.to_string()).collect(), kb).unwrap()
}

pub fn zero_model(variant: Variant, vocab: &Vocabulary) -> Model {
    Model::zeros(ModelConfig::with_dims(D, variant), vocab.common_len())
}

/// Weights under which `r` is large for `sing` candidates and small for
/// everything else, and the gate is always open.
pub fn sing_ranker(variant: Variant, vocab: &Vocabulary) -> Model {
    let mut m = zero_model(variant, vocab);
    set(&mut m, "gate.b", 0, 0, 50.0);
    let sing = vocab.common_id("<rel:sing>").unwrap();
    let album = vocab.common_id("<rel:album_of>").unwrap();
    set(&mut m, "emb", sing, 0, 1.0);
    set(&mut m, "emb", album, 0, -1.0);
    // hidden[0] = tanh(5 * pred[0]); input layout is [h_last; type; pred]
    set(&mut m, "match.w1", 0, 2 * D, 5.0);
    set(&mut m, "match.w2", 0, 0, 5.0);
    m
}
