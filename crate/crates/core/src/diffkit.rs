//! Reverse-mode automatic differentiation over scalar computation graphs.
//!
//! A [`CompGraph`] is built once with a [`GraphBuilder`] and then evaluated
//! many times against changing parameter and input values. Nodes are stored
//! in topological order (every node's operands precede it), so the forward
//! pass is a single sweep and the backward pass is the reverse sweep.
//!
//! Besides the elementary scalar operations the graph has three reduction
//! nodes (`affine`, `dot`, `sum`) that read a span of operand nodes, and a
//! fused `logit_mixture` node for the monotone sigmoid-mixture sublayer. They
//! keep node counts small for the dense layers of the conditional networks.
//!
//! ```
//! use nhpp_flow::diffkit::{GraphBuilder, ParamVector};
//!
//! let mut b = GraphBuilder::new();
//! let x = b.input();
//! let y = b.mul(x, x);
//! let mut graph = b.finish(y, 0);
//! let params = ParamVector::default();
//! assert_eq!(graph.forward_eval(&params, &[3.0]).unwrap(), 9.0);
//! ```

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower and upper clamp applied to the argument of every logit.
pub const LOGIT_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("expected {expected} {what}, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("non-finite gradient for parameter {index}")]
    NonFiniteAdjoint { index: usize },
    #[error("backward pass requested before a forward pass on the same inputs")]
    BackwardBeforeForward,
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `(sigmoid(t), sigmoid(-t))` from a single exponential.
#[inline]
pub fn sigmoid_pair(t: f64) -> (f64, f64) {
    let e = (-t.abs()).exp();
    let r = 1.0 / (1.0 + e);
    if t >= 0.0 {
        (r, e * r)
    } else {
        (e * r, r)
    }
}

/// Logit with the argument clamped to `[LOGIT_CLAMP, 1 - LOGIT_CLAMP]`.
#[inline]
pub fn logit(u: f64) -> f64 {
    let u = u.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    (u / (1.0 - u)).ln()
}

/// Handle to a node of a graph under construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Operand list of a reduction node: either a run of consecutive nodes or a
/// slice of the graph's edge table.
#[derive(Debug, Clone, Copy)]
struct Span {
    start: u32,
    len: u32,
    packed: bool,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Input(u32),
    Param(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Log(u32),
    Sigmoid(u32),
    Logit(u32),
    /// `params[b] + sum_j params[w + j] * x_j`
    Affine { x: Span, w: u32, b: Option<u32> },
    Dot { a: Span, b: Span },
    Sum(Span),
    /// `logit(sum_i w_i sigmoid(a_i x + b_i))`; the log-slope in `x` is
    /// written to the following `MixtureSlope` node.
    LogitMixture { x: u32, w: Span, a: Span, b: Span },
    MixtureSlope,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const(_) => "const",
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sigmoid(_) => "sigmoid",
            Op::Logit(_) => "logit",
            Op::Affine { .. } => "affine",
            Op::Dot { .. } => "dot",
            Op::Sum(_) => "sum",
            Op::LogitMixture { .. } => "logit_mixture",
            Op::MixtureSlope => "mixture_slope",
        }
    }
}

/// Which part of a triangular layer a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Free sublayer parameters of the first coordinate.
    Free,
    CondWeightsIn,
    CondBiasIn,
    CondWeightsOut,
    CondBiasOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub layer: usize,
    pub dim: usize,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub key: ParamKey,
    pub start: usize,
    pub len: usize,
}

impl ParamBlock {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Flat vector of trainable scalars plus a named layout of its blocks.
///
/// Blocks are appended back to back, so every scalar belongs to exactly one
/// block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    blocks: Vec<ParamBlock>,
}

impl ParamVector {
    /// Appends a zero-initialised block and returns its range.
    pub fn push_block(&mut self, key: ParamKey, len: usize) -> Range<usize> {
        let start = self.values.len();
        self.values.resize(start + len, 0.0);
        self.blocks.push(ParamBlock { key, start, len });
        start..start + len
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, key: ParamKey) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.key == key)
    }

    pub fn slice(&self, key: ParamKey) -> Option<&[f64]> {
        self.block(key).map(|b| &self.values[b.range()])
    }

    /// True when the blocks tile `0..len` without gaps, overlaps or repeated keys.
    pub fn layout_is_bijective(&self) -> bool {
        let mut next = 0;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.start != next || self.blocks[..i].iter().any(|o| o.key == b.key) {
                return false;
            }
            next += b.len;
        }
        next == self.values.len()
    }
}

/// Incrementally records a computation graph in topological order.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    ops: Vec<Op>,
    edges: Vec<u32>,
    n_inputs: u32,
    max_param: Option<u32>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.ops.len() as u32);
        self.ops.push(op);
        id
    }

    fn note_param(&mut self, p: u32) {
        self.max_param = Some(self.max_param.map_or(p, |m| m.max(p)));
    }

    fn span(&mut self, ids: &[NodeId]) -> Span {
        let packed = ids.windows(2).all(|w| w[1].0 == w[0].0 + 1);
        if packed {
            Span {
                start: ids.first().map_or(0, |n| n.0),
                len: ids.len() as u32,
                packed: true,
            }
        } else {
            let start = self.edges.len() as u32;
            self.edges.extend(ids.iter().map(|n| n.0));
            Span {
                start,
                len: ids.len() as u32,
                packed: false,
            }
        }
    }

    pub fn constant(&mut self, v: f64) -> NodeId {
        self.push(Op::Const(v))
    }

    /// Allocates the next input slot.
    pub fn input(&mut self) -> NodeId {
        let i = self.n_inputs;
        self.n_inputs += 1;
        self.push(Op::Input(i))
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        self.note_param(index as u32);
        self.push(Op::Param(index as u32))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a.0))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a.0))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a.0))
    }

    pub fn logit(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Logit(a.0))
    }

    /// `params[bias] + sum_j params[weights_start + j] * inputs[j]`.
    pub fn affine(&mut self, inputs: &[NodeId], weights_start: usize, bias: Option<usize>) -> NodeId {
        if !inputs.is_empty() {
            self.note_param((weights_start + inputs.len() - 1) as u32);
        }
        if let Some(b) = bias {
            self.note_param(b as u32);
        }
        let x = self.span(inputs);
        self.push(Op::Affine {
            x,
            w: weights_start as u32,
            b: bias.map(|b| b as u32),
        })
    }

    pub fn dot(&mut self, a: &[NodeId], b: &[NodeId]) -> NodeId {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let a = self.span(a);
        let b = self.span(b);
        self.push(Op::Dot { a, b })
    }

    pub fn sum(&mut self, a: &[NodeId]) -> NodeId {
        let a = self.span(a);
        self.push(Op::Sum(a))
    }

    /// `S = logit(sum_i w_i sigmoid(a_i x + b_i))` and `log dS/dx` as one
    /// fused node pair. `w` should already sum to one and `a` be positive.
    pub fn logit_mixture(&mut self, x: NodeId, w: &[NodeId], a: &[NodeId], b: &[NodeId]) -> (NodeId, NodeId) {
        assert!(
            w.len() == a.len() && a.len() == b.len() && !w.is_empty(),
            "mixture operands differ in length"
        );
        let w = self.span(w);
        let a = self.span(a);
        let b = self.span(b);
        let s = self.push(Op::LogitMixture { x: x.0, w, a, b });
        let ld = self.push(Op::MixtureSlope);
        (s, ld)
    }

    /// Seals the graph with `output` as the differentiated node. `n_params`
    /// is the length of the parameter vector the graph will be run against.
    pub fn finish(self, output: NodeId, n_params: usize) -> CompGraph {
        if let Some(m) = self.max_param {
            assert!(
                (m as usize) < n_params,
                "graph references parameter {m} but only {n_params} declared"
            );
        }
        let n = self.ops.len();
        CompGraph {
            ops: self.ops,
            edges: self.edges,
            n_inputs: self.n_inputs as usize,
            n_params,
            output: output.0 as usize,
            values: vec![0.0; n],
            adjoints: vec![0.0; n],
            forwarded: None,
        }
    }
}

/// A sealed computation graph with preallocated value and adjoint buffers.
#[derive(Debug, Clone)]
pub struct CompGraph {
    ops: Vec<Op>,
    edges: Vec<u32>,
    n_inputs: usize,
    n_params: usize,
    output: usize,
    values: Vec<f64>,
    adjoints: Vec<f64>,
    // inputs and params of the last successful forward pass
    forwarded: Option<(Vec<f64>, Vec<f64>)>,
}

/// Dot product with four independent accumulators.
#[inline]
fn dot4(x: &[f64], w: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let xc = x.chunks_exact(4);
    let wc = w.chunks_exact(4);
    let tail: f64 = xc.remainder().iter().zip(wc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(wc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn span_node(edges: &[u32], s: Span, j: usize) -> usize {
    if s.packed {
        s.start as usize + j
    } else {
        edges[s.start as usize + j] as usize
    }
}

impl CompGraph {
    pub fn n_nodes(&self) -> usize {
        self.ops.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Value buffer of the last forward pass.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: NodeId) -> f64 {
        self.values[node.index()]
    }

    fn check_arity(&self, params: &[f64], inputs: &[f64]) -> Result<(), GraphError> {
        if params.len() != self.n_params {
            return Err(GraphError::Arity {
                what: "parameters",
                expected: self.n_params,
                got: params.len(),
            });
        }
        if inputs.len() != self.n_inputs {
            return Err(GraphError::Arity {
                what: "inputs",
                expected: self.n_inputs,
                got: inputs.len(),
            });
        }
        Ok(())
    }

    pub fn forward_eval(&mut self, params: &ParamVector, inputs: &[f64]) -> Result<f64, GraphError> {
        self.forward_raw(params.values(), inputs)?;
        let out = self.values[self.output];
        let (ins, ps) = self.forwarded.get_or_insert_with(Default::default);
        ins.clear();
        ins.extend_from_slice(inputs);
        ps.clear();
        ps.extend_from_slice(params.values());
        Ok(out)
    }

    /// Forward pass against a raw parameter slice without recording the
    /// inputs for [`CompGraph::backward_grad`].
    pub fn forward_raw(&mut self, params: &[f64], inputs: &[f64]) -> Result<f64, GraphError> {
        self.check_arity(params, inputs)?;
        self.forwarded = None;
        let edges = &self.edges;
        let vals = &mut self.values;
        for i in 0..self.ops.len() {
            let v = match self.ops[i] {
                Op::Const(c) => c,
                Op::Input(k) => inputs[k as usize],
                Op::Param(p) => params[p as usize],
                Op::Add(a, b) => vals[a as usize] + vals[b as usize],
                Op::Sub(a, b) => vals[a as usize] - vals[b as usize],
                Op::Mul(a, b) => vals[a as usize] * vals[b as usize],
                Op::Div(a, b) => vals[a as usize] / vals[b as usize],
                Op::Neg(a) => -vals[a as usize],
                Op::Exp(a) => vals[a as usize].exp(),
                Op::Log(a) => vals[a as usize].ln(),
                Op::Sigmoid(a) => sigmoid(vals[a as usize]),
                Op::Logit(a) => logit(vals[a as usize]),
                Op::Affine { x, w, b } => {
                    let mut acc = b.map_or(0.0, |b| params[b as usize]);
                    let w = &params[w as usize..w as usize + x.len as usize];
                    if x.packed {
                        let xs = &vals[x.start as usize..(x.start + x.len) as usize];
                        acc += dot4(xs, w);
                    } else {
                        for (j, wj) in w.iter().enumerate() {
                            acc += wj * vals[span_node(edges, x, j)];
                        }
                    }
                    acc
                }
                Op::Dot { a, b } => (0..a.len as usize)
                    .map(|j| vals[span_node(edges, a, j)] * vals[span_node(edges, b, j)])
                    .sum(),
                Op::Sum(a) => (0..a.len as usize).map(|j| vals[span_node(edges, a, j)]).sum(),
                Op::LogitMixture { x, w, a, b } => {
                    let xv = vals[x as usize];
                    let (mut u, mut v, mut d) = (0.0, 0.0, 0.0);
                    for j in 0..w.len as usize {
                        let wj = vals[span_node(edges, w, j)];
                        let aj = vals[span_node(edges, a, j)];
                        let (p, q) = sigmoid_pair(aj * xv + vals[span_node(edges, b, j)]);
                        u += wj * p;
                        v += wj * q;
                        d += wj * aj * p * q;
                    }
                    let lu = u.max(f64::MIN_POSITIVE).ln();
                    let lv = v.max(f64::MIN_POSITIVE).ln();
                    vals[i + 1] = d.max(f64::MIN_POSITIVE).ln() - lu - lv;
                    lu - lv
                }
                Op::MixtureSlope => vals[i],
            };
            if !v.is_finite() {
                return Err(GraphError::NonFinite {
                    node: i,
                    op: self.ops[i].name(),
                });
            }
            vals[i] = v;
        }
        Ok(vals[self.output])
    }

    /// Gradient of the output node with respect to every parameter. Requires
    /// a preceding [`CompGraph::forward_eval`] on the same parameters and inputs.
    pub fn backward_grad(&mut self, params: &ParamVector, inputs: &[f64]) -> Result<Vec<f64>, GraphError> {
        match &self.forwarded {
            Some((ins, ps))
                if bit_eq(ins, inputs) && bit_eq(ps, params.values()) => {}
            _ => return Err(GraphError::BackwardBeforeForward),
        }
        let mut grad = vec![0.0; self.n_params];
        self.accumulate_grad(params.values(), 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale * d(output)/d(params)` into `grad`. The caller guarantees
    /// the value buffer holds a forward pass at `params`.
    pub fn accumulate_grad(&mut self, params: &[f64], scale: f64, grad: &mut [f64]) -> Result<(), GraphError> {
        if grad.len() != self.n_params || params.len() != self.n_params {
            return Err(GraphError::Arity {
                what: "gradient entries",
                expected: self.n_params,
                got: grad.len(),
            });
        }
        let edges = &self.edges;
        let vals = &self.values;
        let adj = &mut self.adjoints;
        adj.fill(0.0);
        adj[self.output] = scale;
        for i in (0..self.ops.len()).rev() {
            let g = adj[i];
            if g == 0.0 && !matches!(self.ops[i], Op::LogitMixture { .. }) {
                continue;
            }
            match self.ops[i] {
                Op::Const(_) | Op::Input(_) => {}
                Op::Param(p) => grad[p as usize] += g,
                Op::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    adj[a as usize] += g * vb;
                    adj[b as usize] += g * va;
                }
                Op::Div(a, b) => {
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    adj[a as usize] += g / vb;
                    adj[b as usize] -= g * va / (vb * vb);
                }
                Op::Neg(a) => adj[a as usize] -= g,
                Op::Exp(a) => adj[a as usize] += g * vals[i],
                Op::Log(a) => adj[a as usize] += g / vals[a as usize],
                Op::Sigmoid(a) => {
                    // sigma'(t) = sigma(t) sigma(-t), without the 1 - sigma cancellation
                    adj[a as usize] += g * vals[i] * sigmoid(-vals[a as usize]);
                }
                Op::Logit(a) => {
                    let u = vals[a as usize];
                    if (LOGIT_CLAMP..=1.0 - LOGIT_CLAMP).contains(&u) {
                        adj[a as usize] += g / (u * (1.0 - u));
                    }
                }
                Op::Affine { x, w, b } => {
                    if let Some(b) = b {
                        grad[b as usize] += g;
                    }
                    let w = w as usize;
                    let n = x.len as usize;
                    if x.packed {
                        let xs = x.start as usize;
                        let gw = &mut grad[w..w + n];
                        for (gj, v) in gw.iter_mut().zip(&vals[xs..xs + n]) {
                            *gj += g * v;
                        }
                        for (aj, p) in adj[xs..xs + n].iter_mut().zip(&params[w..w + n]) {
                            *aj += g * p;
                        }
                    } else {
                        for j in 0..n {
                            let node = span_node(edges, x, j);
                            grad[w + j] += g * vals[node];
                            adj[node] += g * params[w + j];
                        }
                    }
                }
                Op::Dot { a, b } => {
                    for j in 0..a.len as usize {
                        let (na, nb) = (span_node(edges, a, j), span_node(edges, b, j));
                        let (va, vb) = (vals[na], vals[nb]);
                        adj[na] += g * vb;
                        adj[nb] += g * va;
                    }
                }
                Op::Sum(a) => {
                    for j in 0..a.len as usize {
                        adj[span_node(edges, a, j)] += g;
                    }
                }
                Op::LogitMixture { x, w, a, b } => {
                    let g_slope = adj[i + 1];
                    if g == 0.0 && g_slope == 0.0 {
                        continue;
                    }
                    let xv = vals[x as usize];
                    let m = w.len as usize;
                    let (mut u, mut v, mut d) = (0.0, 0.0, 0.0);
                    for j in 0..m {
                        let wj = vals[span_node(edges, w, j)];
                        let aj = vals[span_node(edges, a, j)];
                        let (p, q) = sigmoid_pair(aj * xv + vals[span_node(edges, b, j)]);
                        u += wj * p;
                        v += wj * q;
                        d += wj * aj * p * q;
                    }
                    let u = u.max(f64::MIN_POSITIVE);
                    let v = v.max(f64::MIN_POSITIVE);
                    let d = d.max(f64::MIN_POSITIVE);
                    // S = ln u - ln v, log-slope = ln d - ln u - ln v
                    let gu = (g - g_slope) / u;
                    let gv = -(g + g_slope) / v;
                    let gd = g_slope / d;
                    let mut gx = 0.0;
                    for j in 0..m {
                        let (nw, na, nb) = (span_node(edges, w, j), span_node(edges, a, j), span_node(edges, b, j));
                        let (wj, aj) = (vals[nw], vals[na]);
                        let (p, q) = sigmoid_pair(aj * xv + vals[nb]);
                        let pq = p * q;
                        adj[nw] += gu * p + gv * q + gd * aj * pq;
                        let gt = wj * pq * (gu - gv + gd * aj * (q - p));
                        adj[na] += gt * xv + gd * wj * pq;
                        adj[nb] += gt;
                        gx += gt * aj;
                    }
                    adj[x as usize] += gx;
                }
                Op::MixtureSlope => {}
            }
        }
        if let Some(index) = grad.iter().position(|v| !v.is_finite()) {
            return Err(GraphError::NonFiniteAdjoint { index });
        }
        Ok(())
    }
}

fn bit_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn no_params() -> ParamVector {
        ParamVector::default()
    }

    #[test]
    fn square_and_its_derivative() {
        let mut b = GraphBuilder::new();
        let x = b.param(0);
        let y = b.mul(x, x);
        let mut g = b.finish(y, 1);
        let mut p = ParamVector::default();
        p.push_block(
            ParamKey { layer: 0, dim: 0, group: ParamGroup::Free },
            1,
        );
        p.values_mut()[0] = 3.0;
        assert_eq!(g.forward_eval(&p, &[]).unwrap(), 9.0);
        assert_eq!(g.backward_grad(&p, &[]).unwrap(), vec![6.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut b = GraphBuilder::new();
        let t = b.param(0);
        let s = b.sigmoid(t);
        let mut g = b.finish(s, 1);
        let mut p = ParamVector::default();
        p.push_block(ParamKey { layer: 0, dim: 0, group: ParamGroup::Free }, 1);
        assert_eq!(g.forward_eval(&p, &[]).unwrap(), 0.5);
        assert_eq!(g.backward_grad(&p, &[]).unwrap(), vec![0.25]);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        let mut b = GraphBuilder::new();
        let t = b.input();
        let s = b.sigmoid(t);
        let l = b.logit(s);
        let mut g = b.finish(l, 0);
        let v = g.forward_eval(&no_params(), &[1.7]).unwrap();
        assert!((v - 1.7).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_for_large_arguments() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!(sigmoid(-40.0) > 0.0);
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let mut b = GraphBuilder::new();
        let x = b.input();
        let mut g = b.finish(x, 0);
        assert!(matches!(
            g.forward_eval(&no_params(), &[1.0, 2.0]),
            Err(GraphError::Arity { what: "inputs", .. })
        ));
    }

    #[test]
    fn log_of_negative_is_a_domain_error() {
        let mut b = GraphBuilder::new();
        let x = b.input();
        let y = b.log(x);
        let mut g = b.finish(y, 0);
        assert!(matches!(
            g.forward_eval(&no_params(), &[-1.0]),
            Err(GraphError::NonFinite { op: "log", .. })
        ));
    }

    #[test]
    fn backward_needs_matching_forward() {
        let mut b = GraphBuilder::new();
        let x = b.input();
        let y = b.exp(x);
        let mut g = b.finish(y, 0);
        assert_eq!(
            g.backward_grad(&no_params(), &[1.0]),
            Err(GraphError::BackwardBeforeForward)
        );
        g.forward_eval(&no_params(), &[1.0]).unwrap();
        assert_eq!(
            g.backward_grad(&no_params(), &[2.0]),
            Err(GraphError::BackwardBeforeForward)
        );
        assert!(g.backward_grad(&no_params(), &[1.0]).is_ok());
    }

    #[test]
    fn layout_bijection() {
        let mut p = ParamVector::default();
        p.push_block(ParamKey { layer: 0, dim: 0, group: ParamGroup::Free }, 3);
        p.push_block(ParamKey { layer: 0, dim: 1, group: ParamGroup::CondBiasIn }, 2);
        assert!(p.layout_is_bijective());
        assert_eq!(p.len(), 5);
        p.push_block(ParamKey { layer: 0, dim: 0, group: ParamGroup::Free }, 1);
        assert!(!p.layout_is_bijective());
    }

    /// Builds a random graph over 4 parameters and 2 inputs that exercises
    /// every primitive, keeping log/div/logit arguments in their domains.
    fn random_graph(rng: &mut ChaCha8Rng) -> CompGraph {
        let mut b = GraphBuilder::new();
        let xs = [b.input(), b.input()];
        let ps: Vec<_> = (0..4).map(|i| b.param(i)).collect();
        let mut pool: Vec<NodeId> = xs.iter().chain(&ps).copied().collect();
        for _ in 0..12 {
            let a = pool[rng.random_range(0..pool.len())];
            let c = pool[rng.random_range(0..pool.len())];
            let node = match rng.random_range(0..12) {
                0 => b.add(a, c),
                1 => b.sub(a, c),
                2 => b.mul(a, c),
                3 => {
                    // 1 + exp(c) is strictly positive
                    let e = b.exp(c);
                    let one = b.constant(1.0);
                    let d = b.add(one, e);
                    b.div(a, d)
                }
                4 => b.neg(a),
                5 => {
                    let s = b.sigmoid(a);
                    b.exp(s)
                }
                6 => {
                    let e = b.exp(a);
                    let one = b.constant(1.0);
                    let d = b.add(one, e);
                    b.log(d)
                }
                7 => b.sigmoid(a),
                8 => {
                    let s = b.sigmoid(a);
                    b.logit(s)
                }
                9 => b.affine(&[a, c], 0, Some(3)),
                10 => b.dot(&[a, c], &[c, a]),
                _ => b.sum(&[a, c]),
            };
            // squash to keep magnitudes bounded
            let squashed = b.sigmoid(node);
            pool.push(squashed);
            pool.push(node);
        }
        let tail: Vec<_> = pool[pool.len() - 6..].to_vec();
        let out = b.sum(&tail);
        b.finish(out, 4)
    }

    fn params4(vals: &[f64]) -> ParamVector {
        let mut p = ParamVector::default();
        p.push_block(ParamKey { layer: 0, dim: 0, group: ParamGroup::Free }, 4);
        p.values_mut().copy_from_slice(vals);
        p
    }

    #[test]
    fn gradients_match_finite_differences_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..100 {
            let mut g = random_graph(&mut rng);
            let vals: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            let inputs: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
            let p = params4(&vals);
            g.forward_eval(&p, &inputs).unwrap();
            let grad = g.backward_grad(&p, &inputs).unwrap();
            for i in 0..4 {
                let mut up = vals.clone();
                up[i] += h;
                let mut dn = vals.clone();
                dn[i] -= h;
                let fu = g.forward_eval(&params4(&up), &inputs).unwrap();
                let fd = g.forward_eval(&params4(&dn), &inputs).unwrap();
                let numeric = (fu - fd) / (2.0 * h);
                if grad[i].abs() > 1e-8 {
                    let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs());
                    assert!(rel <= 1e-5, "param {i}: {} vs {numeric} (rel {rel})", grad[i]);
                } else {
                    assert!((grad[i] - numeric).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut g1 = random_graph(&mut rng);
            let mut g2 = random_graph(&mut rng);
            let vals: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let inputs = [0.3, -0.4];
            let p = params4(&vals);
            g1.forward_eval(&p, &inputs).unwrap();
            g2.forward_eval(&p, &inputs).unwrap();
            let mut summed = vec![0.0; 4];
            g1.accumulate_grad(p.values(), 1.0, &mut summed).unwrap();
            g2.accumulate_grad(p.values(), 1.0, &mut summed).unwrap();
            let a = g1.backward_grad(&p, &inputs).unwrap();
            let b = g2.backward_grad(&p, &inputs).unwrap();
            for i in 0..4 {
                assert!((summed[i] - (a[i] + b[i])).abs() <= 1e-12 * (1.0 + summed[i].abs()));
            }
        }
    }

    #[test]
    fn repeated_passes_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = random_graph(&mut rng);
        let p = params4(&[0.1, -0.2, 0.3, 0.7]);
        let inputs = [0.5, 0.25];
        let v1 = g.forward_eval(&p, &inputs).unwrap();
        let g1 = g.backward_grad(&p, &inputs).unwrap();
        let v2 = g.forward_eval(&p, &inputs).unwrap();
        let g2 = g.backward_grad(&p, &inputs).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert!(bit_eq(&g1, &g2));
    }

    #[test]
    fn non_contiguous_spans_match_packed_spans() {
        let mut b = GraphBuilder::new();
        let x0 = b.input();
        let x1 = b.input();
        let x2 = b.input();
        let packed = b.sum(&[x0, x1, x2]);
        let scattered = b.sum(&[x2, x0, x1]);
        let diff = b.sub(packed, scattered);
        let mut g = b.finish(diff, 0);
        assert_eq!(g.forward_eval(&no_params(), &[1.0, 2.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn logit_mixture_value_and_gradient() {
        let m = 3;
        let mut b = GraphBuilder::new();
        let x = b.param(0);
        let w: Vec<_> = (0..m).map(|j| b.param(1 + j)).collect();
        let a: Vec<_> = (0..m).map(|j| b.param(1 + m + j)).collect();
        let off: Vec<_> = (0..m).map(|j| b.param(1 + 2 * m + j)).collect();
        let (s, ld) = b.logit_mixture(x, &w, &a, &off);
        let c = b.constant(0.7);
        let scaled = b.mul(c, ld);
        let out = b.add(s, scaled);
        let mut g = b.finish(out, 1 + 3 * m);
        let values = [0.3, 0.2, 0.5, 0.3, 1.5, 0.4, 2.2, -0.8, 0.1, 1.3];
        let expected = |v: &[f64]| {
            let (mut u, mut q, mut d) = (0.0, 0.0, 0.0);
            for j in 0..m {
                let (wj, aj, bj) = (v[1 + j], v[1 + m + j], v[1 + 2 * m + j]);
                let p = 1.0 / (1.0 + (-(aj * v[0] + bj)).exp());
                u += wj * p;
                q += wj * (1.0 - p);
                d += wj * aj * p * (1.0 - p);
            }
            (u / q).ln() + 0.7 * (d / (u * q)).ln()
        };
        let v0 = g.forward_raw(&values, &[]).unwrap();
        assert!((v0 - expected(&values)).abs() < 1e-13);
        let mut grad = vec![0.0; values.len()];
        g.forward_raw(&values, &[]).unwrap();
        g.accumulate_grad(&values, 1.0, &mut grad).unwrap();
        for i in 0..values.len() {
            let h = 1e-6;
            let mut up = values;
            up[i] += h;
            let mut dn = values;
            dn[i] -= h;
            let fd = (expected(&up) - expected(&dn)) / (2.0 * h);
            assert!((grad[i] - fd).abs() <= 1e-7 * fd.abs().max(1.0), "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn sigmoid_pair_is_complementary() {
        for t in [-800.0, -30.0, -1.0, 0.0, 0.5, 40.0, 800.0] {
            let (p, q) = sigmoid_pair(t);
            assert!((p - sigmoid(t)).abs() <= 1e-15 * sigmoid(t));
            assert!((q - sigmoid(-t)).abs() <= 1e-15 * sigmoid(-t));
        }
    }
}
