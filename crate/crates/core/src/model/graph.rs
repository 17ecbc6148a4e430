//! A small reverse-mode autodiff tape over `f64` vectors.
//!
//! Nodes hold vector values; parameters are read straight from a
//! [`ParamStore`] by the ops that use them and their gradients are
//! accumulated into a [`Gradients`] buffer by [`Graph::backward`].

use crate::model::params::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Lookup { table: ParamId, row: usize },
    Linear { w: ParamId, b: Option<ParamId>, xs: Vec<NodeId> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LogSoftplus(NodeId),
    LogSigmoid(NodeId),
    Stack(Vec<NodeId>),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    WeightedSum { weights: NodeId, xs: Vec<NodeId> },
    Index(NodeId, usize),
    Total(Vec<(NodeId, f64)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(softplus(x))`, finite for all finite `x`.
pub fn log_softplus(x: f64) -> f64 {
    let sp = softplus(x);
    if sp > 0.0 {
        sp.ln()
    } else {
        x
    }
}

/// `ln(sigmoid(x)) = -softplus(-x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id.0].value;
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn lookup(&mut self, table: ParamId, row: usize) -> NodeId {
        let value = self.params.get(table).row(row).to_vec();
        self.push(value, Op::Lookup { table, row })
    }

    /// `W [x_1; x_2; …] + b` with the inputs concatenated implicitly.
    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, xs: &[NodeId]) -> NodeId {
        let wt = self.params.get(w);
        let in_dim: usize = xs.iter().map(|x| self.nodes[x.0].value.len()).sum();
        assert_eq!(
            in_dim,
            wt.cols,
            "linear {}: input width {in_dim} != {}",
            self.params.name(w),
            wt.cols
        );
        let mut out = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; wt.rows],
        };
        for (i, o) in out.iter_mut().enumerate() {
            let row = wt.row(i);
            let mut off = 0;
            let mut acc = 0.0;
            for x in xs {
                let xv = &self.nodes[x.0].value;
                acc += row[off..off + xv.len()]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
                off += xv.len();
            }
            *o += acc;
        }
        self.push(out, Op::Linear { w, b, xs: xs.to_vec() })
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "elementwise op on mismatched lengths");
        let v = va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect();
        self.push(v, op)
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        self.push(v, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log_softplus(&mut self, a: NodeId) -> NodeId {
        self.map(a, log_softplus, Op::LogSoftplus(a))
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, log_sigmoid, Op::LogSigmoid(a))
    }

    /// Packs scalar nodes into one vector.
    pub fn stack(&mut self, xs: &[NodeId]) -> NodeId {
        let v = xs
            .iter()
            .map(|x| {
                let v = &self.nodes[x.0].value;
                debug_assert_eq!(v.len(), 1);
                v[0]
            })
            .collect();
        self.push(v, Op::Stack(xs.to_vec()))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = softmax(&self.nodes[a.0].value);
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = log_softmax(&self.nodes[a.0].value);
        self.push(v, Op::LogSoftmax(a))
    }

    /// `Σ_j weights[j] · xs[j]`.
    pub fn weighted_sum(&mut self, weights: NodeId, xs: &[NodeId]) -> NodeId {
        let w = &self.nodes[weights.0].value;
        assert_eq!(w.len(), xs.len());
        let dim = self.nodes[xs[0].0].value.len();
        let mut out = vec![0.0; dim];
        for (wj, x) in w.iter().zip(xs) {
            for (o, v) in out.iter_mut().zip(&self.nodes[x.0].value) {
                *o += wj * v;
            }
        }
        self.push(
            out,
            Op::WeightedSum {
                weights,
                xs: xs.to_vec(),
            },
        )
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = vec![self.nodes[a.0].value[i]];
        self.push(v, Op::Index(a, i))
    }

    /// Weighted sum of scalar nodes.
    pub fn total(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let v: f64 = terms.iter().map(|(n, c)| c * self.nodes[n.0].value[0]).sum();
        self.push(vec![v], Op::Total(terms.to_vec()))
    }

    /// Backpropagates from scalar `loss`, adding parameter gradients to `grads`.
    pub fn backward(&self, loss: NodeId, grads: &mut Gradients) {
        let mut g: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(vec![1.0]);

        fn acc(g: &mut [Option<Vec<f64>>], id: NodeId, delta: impl IntoIterator<Item = f64>) {
            match &mut g[id.0] {
                Some(v) => {
                    for (a, d) in v.iter_mut().zip(delta) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(delta.into_iter().collect()),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(gy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Lookup { table, row } => {
                    let t = grads.get_mut(*table);
                    for (a, d) in t.row_mut(*row).iter_mut().zip(&gy) {
                        *a += d;
                    }
                }
                Op::Linear { w, b, xs } => {
                    let wt = self.params.get(*w);
                    if let Some(b) = b {
                        for (a, d) in grads.get_mut(*b).data.iter_mut().zip(&gy) {
                            *a += d;
                        }
                    }
                    let mut off = 0;
                    for x in xs {
                        let xv = &self.nodes[x.0].value;
                        let n = xv.len();
                        let gw = grads.get_mut(*w);
                        for (i, gi) in gy.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            let row = &mut gw.row_mut(i)[off..off + n];
                            for (a, xc) in row.iter_mut().zip(xv) {
                                *a += gi * xc;
                            }
                        }
                        let mut gx = vec![0.0; n];
                        for (i, gi) in gy.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            for (a, wc) in gx.iter_mut().zip(&wt.row(i)[off..off + n]) {
                                *a += gi * wc;
                            }
                        }
                        acc(&mut g, *x, gx);
                        off += n;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, gy.iter().copied());
                    acc(&mut g, *b, gy.iter().copied());
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *a, gy.iter().copied());
                    acc(&mut g, *b, gy.iter().map(|d| -d));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = gy.iter().zip(vb).map(|(d, x)| d * x).collect();
                    let gb: Vec<f64> = gy.iter().zip(va).map(|(d, x)| d * x).collect();
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut g, *a, gy.iter().map(|d| d * s)),
                Op::Tanh(a) => acc(&mut g, *a, gy.iter().zip(y).map(|(d, t)| d * (1.0 - t * t))),
                Op::Sigmoid(a) => acc(&mut g, *a, gy.iter().zip(y).map(|(d, s)| d * s * (1.0 - s))),
                Op::LogSoftplus(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(
                        &mut g,
                        *a,
                        gy.iter().zip(x).map(|(d, &x)| {
                            let sp = softplus(x);
                            d * if sp > 0.0 { sigmoid(x) / sp } else { 1.0 }
                        }),
                    );
                }
                Op::LogSigmoid(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(&mut g, *a, gy.iter().zip(x).map(|(d, &x)| d * sigmoid(-x)));
                }
                Op::Stack(xs) => {
                    for (x, d) in xs.iter().zip(&gy) {
                        acc(&mut g, *x, [*d]);
                    }
                }
                Op::Softmax(a) => {
                    let dot: f64 = gy.iter().zip(y).map(|(d, p)| d * p).sum();
                    acc(&mut g, *a, gy.iter().zip(y).map(|(d, p)| p * (d - dot)));
                }
                Op::LogSoftmax(a) => {
                    let sum: f64 = gy.iter().sum();
                    acc(&mut g, *a, gy.iter().zip(y).map(|(d, lp)| d - lp.exp() * sum));
                }
                Op::WeightedSum { weights, xs } => {
                    let w = &self.nodes[weights.0].value;
                    let gw: Vec<f64> = xs
                        .iter()
                        .map(|x| {
                            self.nodes[x.0]
                                .value
                                .iter()
                                .zip(&gy)
                                .map(|(v, d)| v * d)
                                .sum()
                        })
                        .collect();
                    acc(&mut g, *weights, gw);
                    for (x, wj) in xs.iter().zip(w) {
                        acc(&mut g, *x, gy.iter().map(|d| d * wj));
                    }
                }
                Op::Index(a, i) => {
                    let n = self.nodes[a.0].value.len();
                    let mut v = vec![0.0; n];
                    v[*i] = gy[0];
                    acc(&mut g, *a, v);
                }
                Op::Total(terms) => {
                    for (n, c) in terms {
                        acc(&mut g, *n, [c * gy[0]]);
                    }
                }
            }
        }
    }
}
