//! The encoder, common-word generator, dynamic knowledge enquirer and gate.
//!
//! Every variant allocates the same parameter set; the variant only decides
//! which parts of the computation are used.

use rand::Rng;

use crate::corpus::vocab::BOS_ID;
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, Variant};
use crate::model::graph::{Graph, NodeId};
use crate::model::params::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
struct GruIds {
    wz: ParamId,
    bz: ParamId,
    wr: ParamId,
    br: ParamId,
    wn: ParamId,
    bn: ParamId,
    un: ParamId,
    bun: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ParamIds {
    emb: ParamId,
    enc: GruIds,
    att_ws: ParamId,
    att_wh: ParamId,
    att_b: ParamId,
    att_v: ParamId,
    fuse_w: ParamId,
    fuse_b: ParamId,
    bridge_w: ParamId,
    bridge_b: ParamId,
    dec: GruIds,
    out_w: ParamId,
    out_b: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
    match_w1: ParamId,
    match_b1: ParamId,
    match_w2: ParamId,
    match_b2: ParamId,
    fupd_ctx: ParamId,
    fupd_b: ParamId,
    fupd_word: ParamId,
    fupd_ent: ParamId,
    uupd_ctx: ParamId,
    uupd_b: ParamId,
    uupd_type: ParamId,
}

/// Parameter names and shapes for a model over `n_common` common words.
pub fn param_shapes(config: &ModelConfig, n_common: usize) -> Vec<(String, usize, usize)> {
    let (e, h) = (config.d_emb, config.d_h);
    let mut shapes: Vec<(String, usize, usize)> = vec![("emb".into(), n_common, e)];
    for (prefix, input) in [("enc", e), ("dec", e)] {
        shapes.extend([
            (format!("{prefix}.wz"), h, input + h),
            (format!("{prefix}.bz"), h, 1),
            (format!("{prefix}.wr"), h, input + h),
            (format!("{prefix}.br"), h, 1),
            (format!("{prefix}.wn"), h, input),
            (format!("{prefix}.bn"), h, 1),
            (format!("{prefix}.un"), h, h),
            (format!("{prefix}.bun"), h, 1),
        ]);
    }
    shapes.extend([
        ("att.ws".into(), h, h),
        ("att.wh".into(), h, h),
        ("att.b".into(), h, 1),
        ("att.v".into(), 1, h),
        ("fuse.w".into(), e, 2 * e),
        ("fuse.b".into(), e, 1),
        ("bridge.w".into(), h, 2 * h),
        ("bridge.b".into(), h, 1),
        ("out.w".into(), n_common, h),
        ("out.b".into(), n_common, 1),
        ("gate.w".into(), 1, 2 * h + e),
        ("gate.b".into(), 1, 1),
        ("match.w1".into(), h, h + 2 * e),
        ("match.b1".into(), h, 1),
        ("match.w2".into(), 1, h),
        ("match.b2".into(), 1, 1),
        ("fupd.ctx".into(), 1, h + e),
        ("fupd.b".into(), 1, 1),
        ("fupd.word".into(), n_common, 1),
        ("fupd.ent".into(), 1, 2),
        ("uupd.ctx".into(), 1, h + e),
        ("uupd.b".into(), 1, 1),
        ("uupd.type".into(), 1, e),
    ]);
    shapes
}

/// What the decoder emitted (or was fed) at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Emitted {
    Common(usize),
    Candidate(usize),
}

/// Model-side view of one retrieved candidate. Only the type and predicate
/// have embeddings; `entity_key` identifies the entity within this
/// candidate set so repeated emissions can be recognized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CandidateFeatures {
    pub type_idx: usize,
    pub pred_idx: usize,
    pub entity_key: usize,
}

/// One supervised decoding step: the task-1 item and the type-substituted
/// common-word label of task 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Label {
    pub item: Emitted,
    pub typed: usize,
}

pub struct Encoded {
    pub states: Vec<NodeId>,
    keys: Vec<NodeId>,
}

impl Encoded {
    pub fn last(&self) -> NodeId {
        *self.states.last().expect("encoder output is never empty")
    }
}

/// Per-message decoding context: encoder output, candidates and the
/// matching scores, which stay fixed for the whole response.
pub struct MessageContext {
    pub encoded: Encoded,
    pub candidates: Vec<CandidateFeatures>,
    pub log_r: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeState {
    pub s: NodeId,
    pub prev: Emitted,
    pub prev2_fed: usize,
    pub emitted_keys: Vec<usize>,
}

pub struct StepNodes {
    pub s: NodeId,
    pub ctx: NodeId,
    pub alpha: NodeId,
    pub log_pc: NodeId,
    pub gate_logit: Option<NodeId>,
    pub log_gate: Option<NodeId>,
    pub log_not_gate: Option<NodeId>,
    pub log_f: Vec<NodeId>,
    pub log_u: Vec<NodeId>,
    pub log_pe: Option<NodeId>,
}

pub struct SequenceLoss {
    pub task1: NodeId,
    pub task2: Option<NodeId>,
    /// Gate cross-entropy against the gold knowledge/common split, over the
    /// steps that had candidates.
    pub gate: Option<NodeId>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    n_common: usize,
    ids: ParamIds,
}

impl Model {
    pub fn new(config: ModelConfig, n_common: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        for (name, r, c) in param_shapes(&config, n_common) {
            store.add(name, Tensor::uniform(r, c, config.init_scale, rng));
        }
        Self::from_store(config, n_common, store).expect("freshly built store")
    }

    pub fn zeros(config: ModelConfig, n_common: usize) -> Self {
        let mut store = ParamStore::new();
        for (name, r, c) in param_shapes(&config, n_common) {
            store.add(name, Tensor::zeros(r, c));
        }
        Self::from_store(config, n_common, store).expect("freshly built store")
    }

    /// Wraps an existing store, checking names and shapes.
    pub fn from_store(config: ModelConfig, n_common: usize, store: ParamStore) -> Result<Self> {
        for (name, r, c) in param_shapes(&config, n_common) {
            let id = store
                .id_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let t = store.get(id);
            if (t.rows, t.cols) != (r, c) {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {}x{}, expected {r}x{c}",
                    t.rows, t.cols
                )));
            }
        }
        let p = |n: &str| store.id_of(n).unwrap();
        let gru = |prefix: &str| GruIds {
            wz: p(&format!("{prefix}.wz")),
            bz: p(&format!("{prefix}.bz")),
            wr: p(&format!("{prefix}.wr")),
            br: p(&format!("{prefix}.br")),
            wn: p(&format!("{prefix}.wn")),
            bn: p(&format!("{prefix}.bn")),
            un: p(&format!("{prefix}.un")),
            bun: p(&format!("{prefix}.bun")),
        };
        let ids = ParamIds {
            emb: p("emb"),
            enc: gru("enc"),
            att_ws: p("att.ws"),
            att_wh: p("att.wh"),
            att_b: p("att.b"),
            att_v: p("att.v"),
            fuse_w: p("fuse.w"),
            fuse_b: p("fuse.b"),
            bridge_w: p("bridge.w"),
            bridge_b: p("bridge.b"),
            dec: gru("dec"),
            out_w: p("out.w"),
            out_b: p("out.b"),
            gate_w: p("gate.w"),
            gate_b: p("gate.b"),
            match_w1: p("match.w1"),
            match_b1: p("match.b1"),
            match_w2: p("match.w2"),
            match_b2: p("match.b2"),
            fupd_ctx: p("fupd.ctx"),
            fupd_b: p("fupd.b"),
            fupd_word: p("fupd.word"),
            fupd_ent: p("fupd.ent"),
            uupd_ctx: p("uupd.ctx"),
            uupd_b: p("uupd.b"),
            uupd_type: p("uupd.type"),
        };
        Ok(Self {
            config,
            store,
            n_common,
            ids,
        })
    }

    pub fn n_common(&self) -> usize {
        self.n_common
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn param(&self, name: &str) -> Option<ParamId> {
        self.store.id_of(name)
    }

    fn check_token(&self, idx: usize) -> Result<()> {
        if idx >= self.n_common {
            return Err(Error::Input(format!(
                "token index {idx} outside common vocabulary of {}",
                self.n_common
            )));
        }
        Ok(())
    }

    fn gru(&self, g: &mut Graph, ids: &GruIds, input: NodeId, hidden: NodeId) -> NodeId {
        let z_pre = g.linear(ids.wz, Some(ids.bz), &[input, hidden]);
        let z = g.sigmoid(z_pre);
        let r_pre = g.linear(ids.wr, Some(ids.br), &[input, hidden]);
        let r = g.sigmoid(r_pre);
        let n_in = g.linear(ids.wn, Some(ids.bn), &[input]);
        let n_hid = g.linear(ids.un, Some(ids.bun), &[hidden]);
        let gated = g.mul(r, n_hid);
        let n_pre = g.add(n_in, gated);
        let n = g.tanh(n_pre);
        let diff = g.sub(hidden, n);
        let keep = g.mul(z, diff);
        g.add(n, keep)
    }

    /// Runs the encoder over a type-substituted message.
    pub fn encode(&self, g: &mut Graph, tokens: &[usize]) -> Result<Encoded> {
        if tokens.is_empty() {
            return Err(Error::Input("cannot encode an empty message".into()));
        }
        let mut h = g.input(vec![0.0; self.config.d_h]);
        let mut states = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            self.check_token(tok)?;
            let x = g.lookup(self.ids.emb, tok);
            h = self.gru(g, &self.ids.enc, x, h);
            states.push(h);
        }
        let keys = states
            .iter()
            .map(|&s| g.linear(self.ids.att_wh, None, &[s]))
            .collect();
        Ok(Encoded { states, keys })
    }

    /// Additive attention of `s_prev` over the encoder states: `(c_t, α_t)`.
    pub fn attend(&self, g: &mut Graph, enc: &Encoded, s_prev: NodeId) -> (NodeId, NodeId) {
        let q = g.linear(self.ids.att_ws, Some(self.ids.att_b), &[s_prev]);
        let scores: Vec<NodeId> = enc
            .keys
            .iter()
            .map(|&k| {
                let sum = g.add(q, k);
                let t = g.tanh(sum);
                g.linear(self.ids.att_v, None, &[t])
            })
            .collect();
        let stacked = g.stack(&scores);
        let alpha = g.softmax(stacked);
        let ctx = g.weighted_sum(alpha, &enc.states);
        (ctx, alpha)
    }

    /// One-layer fusion of the embeddings of the two previous (type-substituted) tokens.
    pub fn fuse(&self, g: &mut Graph, prev: usize, prev2: usize) -> NodeId {
        let a = g.lookup(self.ids.emb, prev);
        let b = g.lookup(self.ids.emb, prev2);
        let pre = g.linear(self.ids.fuse_w, Some(self.ids.fuse_b), &[a, b]);
        g.tanh(pre)
    }

    /// `s_t = GRU(input = fused, hidden = tanh(W [s_{t-1}; c_t] + b))`.
    pub fn update_state(&self, g: &mut Graph, s_prev: NodeId, ctx: NodeId, fused: NodeId) -> NodeId {
        let pre = g.linear(self.ids.bridge_w, Some(self.ids.bridge_b), &[s_prev, ctx]);
        let hidden = g.tanh(pre);
        self.gru(g, &self.ids.dec, fused, hidden)
    }

    /// Log of the common-word distribution `p_c` conditioned on `s_t`.
    pub fn common_log_dist(&self, g: &mut Graph, s: NodeId) -> NodeId {
        let logits = g.linear(self.ids.out_w, Some(self.ids.out_b), &[s]);
        g.log_softmax(logits)
    }

    /// `log r_k` for each candidate from the last encoder state and the
    /// type and predicate embeddings (two layers, softplus output).
    pub fn matching_log_scores(
        &self,
        g: &mut Graph,
        h_last: NodeId,
        cands: &[CandidateFeatures],
    ) -> Vec<NodeId> {
        cands
            .iter()
            .map(|c| {
                let ty = g.lookup(self.ids.emb, c.type_idx);
                let pred = g.lookup(self.ids.emb, c.pred_idx);
                let pre = g.linear(self.ids.match_w1, Some(self.ids.match_b1), &[h_last, ty, pred]);
                let hidden = g.tanh(pre);
                let logit = g.linear(self.ids.match_w2, Some(self.ids.match_b2), &[hidden]);
                g.log_softplus(logit)
            })
            .collect()
    }

    /// `log f_kt` from `s_t`, the previous word (embedding and one-hot) and
    /// whether candidate `k`'s entity was the previous word or was emitted
    /// earlier in the response.
    pub fn entity_update_log_scores(
        &self,
        g: &mut Graph,
        s: NodeId,
        prev: Emitted,
        emitted_keys: &[usize],
        cands: &[CandidateFeatures],
    ) -> Vec<NodeId> {
        let fed = fed_index(prev, cands);
        let mu = g.lookup(self.ids.emb, fed);
        let ctx = g.linear(self.ids.fupd_ctx, Some(self.ids.fupd_b), &[s, mu]);
        let word = g.lookup(self.ids.fupd_word, fed);
        let base = g.add(ctx, word);
        let prev_key = match prev {
            Emitted::Candidate(k) => Some(cands[k].entity_key),
            Emitted::Common(_) => None,
        };
        cands
            .iter()
            .map(|c| {
                let last = f64::from(u8::from(prev_key == Some(c.entity_key)));
                let seen = f64::from(u8::from(emitted_keys.contains(&c.entity_key)));
                let ind = g.input(vec![last, seen]);
                let ent = g.linear(self.ids.fupd_ent, None, &[ind]);
                let logit = g.add(base, ent);
                g.log_softplus(logit)
            })
            .collect()
    }

    /// `log u_kt` from `s_t`, the previous word embedding and candidate `k`'s type embedding.
    pub fn type_update_log_scores(
        &self,
        g: &mut Graph,
        s: NodeId,
        prev_fed: usize,
        cands: &[CandidateFeatures],
    ) -> Vec<NodeId> {
        let mu = g.lookup(self.ids.emb, prev_fed);
        let ctx = g.linear(self.ids.uupd_ctx, Some(self.ids.uupd_b), &[s, mu]);
        cands
            .iter()
            .map(|c| {
                let ty = g.lookup(self.ids.emb, c.type_idx);
                let t = g.linear(self.ids.uupd_type, None, &[ty]);
                let logit = g.add(ctx, t);
                g.log_softplus(logit)
            })
            .collect()
    }

    /// Logit of `p(z_t = 1)` from `s_t`, `c_t` and the previous word embedding.
    pub fn gate_logit(&self, g: &mut Graph, s: NodeId, ctx: NodeId, prev_fed: usize) -> NodeId {
        let mu = g.lookup(self.ids.emb, prev_fed);
        g.linear(self.ids.gate_w, Some(self.ids.gate_b), &[s, ctx, mu])
    }

    /// Encodes the message and scores the candidates once.
    pub fn prepare(
        &self,
        g: &mut Graph,
        message: &[usize],
        candidates: &[CandidateFeatures],
    ) -> Result<MessageContext> {
        let encoded = self.encode(g, message)?;
        let candidates = if self.variant().uses_candidates() {
            for c in candidates {
                self.check_token(c.type_idx)?;
                self.check_token(c.pred_idx)?;
            }
            candidates.to_vec()
        } else {
            Vec::new()
        };
        let log_r = self.matching_log_scores(g, encoded.last(), &candidates);
        Ok(MessageContext {
            encoded,
            candidates,
            log_r,
        })
    }

    pub fn initial_state(&self, ctx: &MessageContext) -> DecodeState {
        DecodeState {
            s: ctx.encoded.last(),
            prev: Emitted::Common(BOS_ID),
            prev2_fed: BOS_ID,
            emitted_keys: Vec::new(),
        }
    }

    pub fn step(&self, g: &mut Graph, ctx: &MessageContext, state: &DecodeState) -> StepNodes {
        let prev_fed = fed_index(state.prev, &ctx.candidates);
        let (c, alpha) = self.attend(g, &ctx.encoded, state.s);
        let fused = self.fuse(g, prev_fed, state.prev2_fed);
        let s = self.update_state(g, state.s, c, fused);
        let log_pc = self.common_log_dist(g, s);
        let mut out = StepNodes {
            s,
            ctx: c,
            alpha,
            log_pc,
            gate_logit: None,
            log_gate: None,
            log_not_gate: None,
            log_f: Vec::new(),
            log_u: Vec::new(),
            log_pe: None,
        };
        if ctx.candidates.is_empty() {
            return out;
        }
        let gl = self.gate_logit(g, s, c, prev_fed);
        let neg = g.scale(gl, -1.0);
        out.gate_logit = Some(gl);
        out.log_gate = Some(g.log_sigmoid(gl));
        out.log_not_gate = Some(g.log_sigmoid(neg));

        let log_r = g.stack(&ctx.log_r);
        let scores = if self.variant().dynamic_enquirer() {
            out.log_f = self.entity_update_log_scores(g, s, state.prev, &state.emitted_keys, &ctx.candidates);
            out.log_u = self.type_update_log_scores(g, s, prev_fed, &ctx.candidates);
            let lf = g.stack(&out.log_f);
            let lu = g.stack(&out.log_u);
            let ru = g.add(log_r, lu);
            g.add(ru, lf)
        } else {
            log_r
        };
        out.log_pe = Some(g.log_softmax(scores));
        out
    }

    /// Log-probability of `item` under the gated mixture of this step.
    pub fn log_prob(&self, g: &mut Graph, step: &StepNodes, item: Emitted) -> Result<NodeId> {
        match item {
            Emitted::Common(w) => {
                let lp = g.index(step.log_pc, w);
                Ok(match step.log_not_gate {
                    Some(lng) => g.add(lp, lng),
                    None => lp,
                })
            }
            Emitted::Candidate(k) => {
                let (Some(lpe), Some(lg)) = (step.log_pe, step.log_gate) else {
                    return Err(Error::Internal("candidate label on a step without candidates".into()));
                };
                let lp = g.index(lpe, k);
                Ok(g.add(lp, lg))
            }
        }
    }

    pub fn advance(&self, ctx: &MessageContext, state: &DecodeState, step: &StepNodes, item: Emitted) -> DecodeState {
        let mut emitted_keys = state.emitted_keys.clone();
        if let Emitted::Candidate(k) = item {
            let key = ctx.candidates[k].entity_key;
            if !emitted_keys.contains(&key) {
                emitted_keys.push(key);
            }
        }
        DecodeState {
            s: step.s,
            prev: item,
            prev2_fed: fed_index(state.prev, &ctx.candidates),
            emitted_keys,
        }
    }

    /// Teacher-forced negative log-likelihoods of a labelled response.
    ///
    /// Task 1 scores the gated mixture; task 2 scores `p_c` against the
    /// type-substituted target. Both share every decoder state. Without
    /// candidates (or for the seq2seq variant) entity labels fall back to
    /// their type token.
    pub fn sequence_loss(
        &self,
        g: &mut Graph,
        message: &[usize],
        candidates: &[CandidateFeatures],
        labels: &[Label],
    ) -> Result<SequenceLoss> {
        let ctx = self.prepare(g, message, candidates)?;
        let mut state = self.initial_state(&ctx);
        let mut task1 = Vec::with_capacity(labels.len());
        let mut task2 = Vec::with_capacity(labels.len());
        let mut gate = Vec::new();
        let want_task2 = self.variant().uses_task2();
        for label in labels {
            self.check_token(label.typed)?;
            let item = match label.item {
                Emitted::Candidate(k) if k < ctx.candidates.len() => label.item,
                Emitted::Candidate(k) if self.variant().uses_candidates() => {
                    return Err(Error::Internal(format!(
                        "label points at candidate {k} of {}",
                        ctx.candidates.len()
                    )))
                }
                Emitted::Candidate(_) => Emitted::Common(label.typed),
                Emitted::Common(w) => {
                    self.check_token(w)?;
                    label.item
                }
            };
            let step = self.step(g, &ctx, &state);
            let lp = self.log_prob(g, &step, item)?;
            task1.push((lp, -1.0));
            let gate_term = match item {
                Emitted::Candidate(_) => step.log_gate,
                Emitted::Common(_) => step.log_not_gate,
            };
            if let Some(t) = gate_term {
                gate.push((t, -1.0));
            }
            if want_task2 {
                let lp2 = g.index(step.log_pc, label.typed);
                task2.push((lp2, -1.0));
            }
            state = self.advance(&ctx, &state, &step, item);
        }
        let task1 = g.total(&task1);
        let task2 = want_task2.then(|| g.total(&task2));
        let gate = (!gate.is_empty()).then(|| g.total(&gate));
        Ok(SequenceLoss {
            task1,
            task2,
            gate,
            steps: labels.len(),
        })
    }
}

/// Vocabulary index fed to the decoder for an emitted item: candidates are
/// replaced by their type token.
pub fn fed_index(item: Emitted, cands: &[CandidateFeatures]) -> usize {
    match item {
        Emitted::Common(w) => w,
        Emitted::Candidate(k) => cands[k].type_idx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const N: usize = 14;

    fn cands() -> Vec<CandidateFeatures> {
        vec![
            CandidateFeatures { type_idx: 4, pred_idx: 6, entity_key: 0 },
            CandidateFeatures { type_idx: 5, pred_idx: 7, entity_key: 1 },
            CandidateFeatures { type_idx: 4, pred_idx: 6, entity_key: 2 },
        ]
    }

    fn labels() -> Vec<Label> {
        vec![
            Label { item: Emitted::Common(8), typed: 8 },
            Label { item: Emitted::Candidate(1), typed: 5 },
            Label { item: Emitted::Common(9), typed: 9 },
            Label { item: Emitted::Candidate(0), typed: 4 },
            Label { item: Emitted::Candidate(2), typed: 4 },
            Label { item: Emitted::Common(2), typed: 2 },
        ]
    }

    fn model(variant: Variant, seed: u64) -> Model {
        let mut cfg = ModelConfig::with_dims(8, variant);
        cfg.init_scale = 0.5;
        Model::new(cfg, N, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn loss_value(m: &Model) -> f64 {
        let mut g = Graph::new(&m.store);
        let l = m.sequence_loss(&mut g, &[10, 4, 11, 12], &cands(), &labels()).unwrap();
        let total = match l.task2 {
            Some(t2) => g.total(&[(l.task1, 1.0), (t2, 0.7)]),
            None => l.task1,
        };
        g.scalar(total)
    }

    #[test]
    fn every_parameter_gradient_matches_finite_differences() {
        for variant in Variant::ALL {
            let m = model(variant, 3);
            let mut grads = Gradients::zeros_like(&m.store);
            {
                let mut g = Graph::new(&m.store);
                let l = m.sequence_loss(&mut g, &[10, 4, 11, 12], &cands(), &labels()).unwrap();
                let total = match l.task2 {
                    Some(t2) => g.total(&[(l.task1, 1.0), (t2, 0.7)]),
                    None => l.task1,
                };
                g.backward(total, &mut grads);
            }
            let h = 1e-4;
            for id in m.store.ids() {
                let mut diff = 0.0f64;
                let mut scale = 0.0f64;
                for i in 0..m.store.get(id).len() {
                    let at = |delta: f64| {
                        let mut shifted = m.clone();
                        shifted.store.get_mut(id).data[i] += delta;
                        loss_value(&shifted)
                    };
                    // fourth-order central stencil
                    let num = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                    let ana = grads.get(id).data[i];
                    diff += (num - ana).powi(2);
                    scale += num.powi(2).max(ana.powi(2));
                }
                let rel = diff.sqrt() / scale.sqrt().max(1e-8);
                assert!(rel <= 1e-4, "{variant}: {} rel err {rel} norm {}", m.store.name(id), scale.sqrt());
            }
        }
    }

    #[test]
    fn step_distributions_are_normalized() {
        let m = model(Variant::Full, 1);
        let mut g = Graph::new(&m.store);
        let ctx = m.prepare(&mut g, &[10, 4, 11], &cands()).unwrap();
        let mut state = m.initial_state(&ctx);
        for item in [Emitted::Common(8), Emitted::Candidate(1), Emitted::Candidate(0)] {
            let step = m.step(&mut g, &ctx, &state);
            let pc: f64 = g.value(step.log_pc).iter().map(|x| x.exp()).sum();
            let pe: f64 = g.value(step.log_pe.unwrap()).iter().map(|x| x.exp()).sum();
            let alpha: f64 = g.value(step.alpha).iter().sum();
            let gate = g.scalar(step.log_gate.unwrap()).exp() + g.scalar(step.log_not_gate.unwrap()).exp();
            for s in [pc, pe, alpha, gate] {
                assert!((s - 1.0).abs() < 1e-12, "{s}");
            }
            state = m.advance(&ctx, &state, &step, item);
        }
    }

    #[test]
    fn static_variant_keeps_entity_distribution_fixed() {
        let m = model(Variant::Static, 2);
        let mut g = Graph::new(&m.store);
        let ctx = m.prepare(&mut g, &[10, 4, 11], &cands()).unwrap();
        let mut state = m.initial_state(&ctx);
        let mut first: Option<Vec<f64>> = None;
        for item in [Emitted::Common(8), Emitted::Candidate(1), Emitted::Common(9)] {
            let step = m.step(&mut g, &ctx, &state);
            let pe = g.value(step.log_pe.unwrap()).to_vec();
            match &first {
                Some(f) => assert_eq!(f, &pe),
                None => first = Some(pe),
            }
            state = m.advance(&ctx, &state, &step, item);
        }
    }

    #[test]
    fn no_candidates_means_common_words_only() {
        let m = model(Variant::Full, 4);
        let mut g = Graph::new(&m.store);
        let ctx = m.prepare(&mut g, &[10, 11], &[]).unwrap();
        let state = m.initial_state(&ctx);
        let step = m.step(&mut g, &ctx, &state);
        assert!(step.log_pe.is_none() && step.log_gate.is_none());
        assert!(m.log_prob(&mut g, &step, Emitted::Candidate(0)).is_err());

        let s2sa = model(Variant::S2sa, 4);
        let mut g = Graph::new(&s2sa.store);
        let ctx = s2sa.prepare(&mut g, &[10, 11], &cands()).unwrap();
        assert!(ctx.candidates.is_empty());
    }

    #[test]
    fn rejects_out_of_range_tokens() {
        let m = model(Variant::Full, 5);
        let mut g = Graph::new(&m.store);
        assert!(matches!(m.encode(&mut g, &[N]), Err(Error::Input(_))));
        assert!(matches!(m.encode(&mut g, &[]), Err(Error::Input(_))));
    }

    #[test]
    fn from_store_checks_shapes() {
        let m = model(Variant::Full, 6);
        assert!(Model::from_store(m.config, N + 1, m.store.clone()).is_err());
        assert_eq!(Model::from_store(m.config, N, m.store.clone()).unwrap(), m);
    }
}
