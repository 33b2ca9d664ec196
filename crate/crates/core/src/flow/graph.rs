//! Differentiable form of the stack's negative log density.

use super::{SublayerKind, TransportStack, HALF_LN_2PI};
use crate::diffkit::{CompGraph, GraphBuilder, GraphError, NodeId};

/// Per-coordinate sublayer parameters as graph nodes, after the positivity
/// transforms have been applied.
#[derive(Clone)]
enum ThetaNodes {
    Naf { w: Vec<NodeId>, a: Vec<NodeId>, b: Vec<NodeId> },
    Affine { loc: NodeId, log_scale: NodeId },
    Iaf { loc: NodeId, gate: NodeId, gate_c: NodeId },
}

fn prepare(b: &mut GraphBuilder, kind: SublayerKind, raw: &[NodeId]) -> ThetaNodes {
    match kind {
        SublayerKind::Naf { m } => {
            let e: Vec<_> = raw[..m].iter().map(|&t| b.exp(t)).collect();
            let total = b.sum(&e);
            let w = e.iter().map(|&v| b.div(v, total)).collect();
            let a = raw[m..2 * m].iter().map(|&t| b.exp(t)).collect();
            ThetaNodes::Naf {
                w,
                a,
                b: raw[2 * m..].to_vec(),
            }
        }
        SublayerKind::AffineAutoregressive => ThetaNodes::Affine {
            loc: raw[0],
            log_scale: raw[1],
        },
        SublayerKind::InverseAutoregressive => {
            let gate = b.sigmoid(raw[1]);
            let neg = b.neg(raw[1]);
            let gate_c = b.sigmoid(neg);
            ThetaNodes::Iaf {
                loc: raw[0],
                gate,
                gate_c,
            }
        }
    }
}

/// Emits `S(x)` and `log dS/dx`.
fn apply(b: &mut GraphBuilder, x: NodeId, theta: &ThetaNodes) -> (NodeId, NodeId) {
    match theta {
        ThetaNodes::Naf { w, a, b: off } => b.logit_mixture(x, w, a, off),
        ThetaNodes::Affine { loc, log_scale } => {
            let scale = b.exp(*log_scale);
            let sx = b.mul(x, scale);
            (b.add(*loc, sx), *log_scale)
        }
        ThetaNodes::Iaf { loc, gate, gate_c } => {
            let gx = b.mul(*gate, x);
            let gl = b.mul(*gate_c, *loc);
            (b.add(gx, gl), b.log(*gate))
        }
    }
}

/// Graph computing `sum_s mask_s * (-log eta(T(y_s)) - log det grad T(y_s))`
/// over a fixed number of point slots.
///
/// Inputs per slot are the `d` embedded coordinates followed by a 0/1 mask,
/// so a partially filled chunk reuses the same graph.
#[derive(Debug, Clone)]
pub struct DensityGraph {
    graph: CompGraph,
    dim: usize,
    slots: usize,
    inputs: Vec<f64>,
}

impl DensityGraph {
    pub fn new(stack: &TransportStack, slots: usize) -> Self {
        assert!(slots > 0);
        let d = stack.dim();
        let kind = stack.kind();
        let mut b = GraphBuilder::new();

        // parameter-only preamble shared by all slots
        let free: Vec<ThetaNodes> = stack
            .layers()
            .iter()
            .map(|layer| {
                let raw: Vec<_> = layer.first_dim.clone().map(|i| b.param(i)).collect();
                prepare(&mut b, kind, &raw)
            })
            .collect();
        let norm_const = b.constant(d as f64 * HALF_LN_2PI);
        let half = b.constant(0.5);

        let mut terms = Vec::with_capacity(slots);
        for _ in 0..slots {
            let mut h: Vec<NodeId> = (0..d).map(|_| b.input()).collect();
            let mask = b.input();
            let mut log_dets = Vec::with_capacity(d * stack.n_layers());
            for (j, layer) in stack.layers().iter().enumerate() {
                let mut z = Vec::with_capacity(d);
                for k in 0..d {
                    let theta = if k == 0 {
                        free[j].clone()
                    } else {
                        let net = &layer.cond_nets[k - 1];
                        let pre: Vec<_> = (0..net.hidden)
                            .map(|u| {
                                b.affine(
                                    &h[..k],
                                    net.weights_in.start + u * k,
                                    Some(net.bias_in.start + u),
                                )
                            })
                            .collect();
                        let hidden: Vec<_> = pre.iter().map(|&v| b.sigmoid(v)).collect();
                        let raw: Vec<_> = (0..net.output_dim)
                            .map(|o| {
                                b.affine(
                                    &hidden,
                                    net.weights_out.start + o * net.hidden,
                                    Some(net.bias_out.start + o),
                                )
                            })
                            .collect();
                        prepare(&mut b, kind, &raw)
                    };
                    let (s, ld) = apply(&mut b, h[k], &theta);
                    z.push(s);
                    log_dets.push(ld);
                }
                h = z;
            }
            let sq: Vec<_> = h.iter().map(|&v| b.mul(v, v)).collect();
            let ss = b.sum(&sq);
            let quad = b.mul(half, ss);
            let neg_log_ref = b.add(quad, norm_const);
            let total_ld = b.sum(&log_dets);
            let nll = b.sub(neg_log_ref, total_ld);
            terms.push(b.mul(mask, nll));
        }
        let out = b.sum(&terms);
        let graph = b.finish(out, stack.params().len());
        Self {
            graph,
            dim: d,
            slots,
            inputs: vec![0.0; slots * (d + 1)],
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn graph(&self) -> &CompGraph {
        &self.graph
    }

    fn load(&mut self, ys: &[f64], chunk: &[usize]) {
        let d = self.dim;
        self.inputs.fill(0.0);
        for (s, &i) in chunk.iter().enumerate() {
            let base = s * (d + 1);
            self.inputs[base..base + d].copy_from_slice(&ys[i * d..(i + 1) * d]);
            self.inputs[base + d] = 1.0;
        }
    }

    /// Objective over the rows `indices` of `ys` (embedded points, row-major).
    pub fn value(&mut self, params: &[f64], ys: &[f64], indices: &[usize]) -> Result<f64, GraphError> {
        let mut total = 0.0;
        for chunk in indices.chunks(self.slots) {
            self.load(ys, chunk);
            total += self.graph.forward_raw(params, &self.inputs)?;
        }
        Ok(total)
    }

    /// Objective and its gradient; the gradient is added into `grad`.
    pub fn value_and_grad(
        &mut self,
        params: &[f64],
        ys: &[f64],
        indices: &[usize],
        grad: &mut [f64],
    ) -> Result<f64, GraphError> {
        let mut total = 0.0;
        for chunk in indices.chunks(self.slots) {
            self.load(ys, chunk);
            total += self.graph.forward_raw(params, &self.inputs)?;
            self.graph.accumulate_grad(params, 1.0, grad)?;
        }
        Ok(total)
    }
}
