//! Increasing triangular maps built from conditional networks and monotone
//! univariate sublayers, their composition, and the log process density.
//!
//! A [`TransportStack`] owns one flat [`ParamVector`]; each
//! [`TriangularLayer`] only records where its blocks live in that vector.
//! Evaluation goes through borrowed [`LayerRef`] views.

mod graph;
mod sublayer;

pub use graph::DensityGraph;
pub use sublayer::{naf_weights, sublayer_eval};

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffkit::{logit, ParamGroup, ParamKey, ParamVector, LOGIT_CLAMP};

/// `0.5 * ln(2 pi)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Family of the univariate monotone map used for every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SublayerKind {
    /// `logit(sum_i w_i sigmoid(a_i x + b_i))` with `m` sigmoid units.
    Naf { m: usize },
    /// `theta1 + x exp(theta2)`
    AffineAutoregressive,
    /// `sigmoid(theta2) x + (1 - sigmoid(theta2)) theta1`
    InverseAutoregressive,
}

impl SublayerKind {
    /// Number of raw parameters per coordinate.
    pub fn n_params(&self) -> usize {
        match self {
            SublayerKind::Naf { m } => 3 * m,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        match self {
            SublayerKind::Naf { m: 0 } => Err(FlowError::Config("NAF width M must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Raw parameters of a gentle starting map.
    ///
    /// NAF: equal weights, unit slopes, offsets spread over `[-2, 2]`.
    pub fn initial_theta(&self) -> Vec<f64> {
        match *self {
            SublayerKind::Naf { m } => {
                let mut t = vec![0.0; 3 * m];
                for i in 0..m {
                    t[2 * m + i] = if m == 1 {
                        0.0
                    } else {
                        -2.0 + 4.0 * i as f64 / (m - 1) as f64
                    };
                }
                t
            }
            SublayerKind::AffineAutoregressive => vec![0.0, 0.0],
            SublayerKind::InverseAutoregressive => vec![0.0, 2.0],
        }
    }

    /// Raw parameters for which the sublayer is the identity (to rounding).
    pub fn identity_theta(&self) -> Vec<f64> {
        match *self {
            SublayerKind::Naf { m } => vec![0.0; 3 * m],
            SublayerKind::AffineAutoregressive => vec![0.0, 0.0],
            // sigmoid(40) rounds to exactly 1.0
            SublayerKind::InverseAutoregressive => vec![0.0, 40.0],
        }
    }
}

/// Raw parameter vector of one univariate sublayer.
#[derive(Debug, Clone, PartialEq)]
pub struct SublayerParams {
    pub raw_theta: Vec<f64>,
}

/// Location of one conditional network's blocks in the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondNetLayout {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub weights_in: Range<usize>,
    pub bias_in: Range<usize>,
    pub weights_out: Range<usize>,
    pub bias_out: Range<usize>,
}

/// One-hidden-layer sigmoid network producing sublayer parameters from the
/// preceding coordinates.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalNet<'a> {
    pub layout: &'a CondNetLayout,
    pub params: &'a [f64],
}

impl ConditionalNet<'_> {
    /// `weights_out . sigmoid(weights_in . prefix + bias_in) + bias_out`
    pub fn forward(&self, prefix: &[f64]) -> Result<SublayerParams, FlowError> {
        let mut hidden = vec![0.0; self.layout.hidden];
        let mut raw = vec![0.0; self.layout.output_dim];
        self.forward_into(prefix, &mut hidden, &mut raw)?;
        Ok(SublayerParams { raw_theta: raw })
    }

    pub(crate) fn forward_into(&self, prefix: &[f64], hidden: &mut [f64], out: &mut [f64]) -> Result<(), FlowError> {
        let l = self.layout;
        if prefix.len() != l.input_dim {
            return Err(FlowError::Dimension {
                expected: l.input_dim,
                got: prefix.len(),
            });
        }
        let w_in = &self.params[l.weights_in.clone()];
        let b_in = &self.params[l.bias_in.clone()];
        for (h, slot) in hidden.iter_mut().enumerate() {
            let row = &w_in[h * l.input_dim..(h + 1) * l.input_dim];
            let a: f64 = b_in[h] + row.iter().zip(prefix).map(|(w, x)| w * x).sum::<f64>();
            *slot = crate::diffkit::sigmoid(a);
        }
        let w_out = &self.params[l.weights_out.clone()];
        let b_out = &self.params[l.bias_out.clone()];
        for (j, slot) in out.iter_mut().enumerate() {
            let row = &w_out[j * l.hidden..(j + 1) * l.hidden];
            *slot = b_out[j] + row.iter().zip(hidden.iter()).map(|(w, x)| w * x).sum::<f64>();
        }
        Ok(())
    }
}

/// Layout of one increasing triangular map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularLayer {
    pub dim: usize,
    pub kind: SublayerKind,
    /// Free parameters of the first coordinate's sublayer.
    pub first_dim: Range<usize>,
    /// Conditional networks for coordinates `2..=d`.
    pub cond_nets: Vec<CondNetLayout>,
}

/// Borrowed view of a layer together with the parameter values.
#[derive(Debug, Clone, Copy)]
pub struct LayerRef<'a> {
    pub layout: &'a TriangularLayer,
    pub params: &'a [f64],
}

impl<'a> LayerRef<'a> {
    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn kind(&self) -> SublayerKind {
        self.layout.kind
    }

    pub fn cond_net(&self, k: usize) -> ConditionalNet<'a> {
        ConditionalNet {
            layout: &self.layout.cond_nets[k - 1],
            params: self.params,
        }
    }

    /// Sublayer parameters of coordinate `k` (0-based) given the layer input
    /// prefix `y[..k]`.
    pub fn component_params(&self, k: usize, prefix: &[f64], out: &mut Vec<f64>) -> Result<(), FlowError> {
        out.clear();
        if k == 0 {
            out.extend_from_slice(&self.params[self.layout.first_dim.clone()]);
            return Ok(());
        }
        let net = self.cond_net(k);
        out.resize(net.layout.output_dim, 0.0);
        let mut hidden = vec![0.0; net.layout.hidden];
        net.forward_into(prefix, &mut hidden, out)
    }

    /// Applies the layer: returns the log-determinant and writes the image of
    /// `y` into `z`.
    pub fn forward_into(&self, y: &[f64], z: &mut [f64]) -> Result<f64, FlowError> {
        let d = self.dim();
        if y.len() != d || z.len() != d {
            return Err(FlowError::Dimension { expected: d, got: y.len() });
        }
        let mut theta = Vec::with_capacity(self.kind().n_params());
        let mut log_det = 0.0;
        for k in 0..d {
            self.component_params(k, &y[..k], &mut theta)?;
            let (s, log_d) = sublayer::sublayer_eval_log(y[k], &theta, self.kind())?;
            z[k] = s;
            log_det += log_d;
        }
        Ok(log_det)
    }

    pub fn forward(&self, y: &[f64]) -> Result<(Vec<f64>, f64), FlowError> {
        let mut z = vec![0.0; y.len()];
        let ld = self.forward_into(y, &mut z)?;
        Ok((z, ld))
    }
}

/// Composition `T = T_N o ... o T_1` of triangular layers with a standard
/// normal reference density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportStack {
    dim: usize,
    kind: SublayerKind,
    hidden: usize,
    layers: Vec<TriangularLayer>,
    params: ParamVector,
}

impl TransportStack {
    /// Allocates a stack with every parameter set to zero.
    pub fn zeros(dim: usize, n_layers: usize, kind: SublayerKind, hidden: usize) -> Result<Self, FlowError> {
        if dim == 0 {
            return Err(FlowError::Config("dimension must be at least 1".into()));
        }
        if n_layers == 0 {
            return Err(FlowError::Config("a stack needs at least one layer".into()));
        }
        if hidden == 0 && dim > 1 {
            return Err(FlowError::Config("conditional-network width must be at least 1".into()));
        }
        kind.validate()?;
        let m = kind.n_params();
        let mut params = ParamVector::default();
        let mut layers = Vec::with_capacity(n_layers);
        for layer in 0..n_layers {
            let key = |dim, group| ParamKey { layer, dim, group };
            let first_dim = params.push_block(key(0, ParamGroup::Free), m);
            let mut cond_nets = Vec::with_capacity(dim - 1);
            for k in 1..dim {
                let weights_in = params.push_block(key(k, ParamGroup::CondWeightsIn), hidden * k);
                let bias_in = params.push_block(key(k, ParamGroup::CondBiasIn), hidden);
                let weights_out = params.push_block(key(k, ParamGroup::CondWeightsOut), m * hidden);
                let bias_out = params.push_block(key(k, ParamGroup::CondBiasOut), m);
                cond_nets.push(CondNetLayout {
                    input_dim: k,
                    hidden,
                    output_dim: m,
                    weights_in,
                    bias_in,
                    weights_out,
                    bias_out,
                });
            }
            layers.push(TriangularLayer {
                dim,
                kind,
                first_dim,
                cond_nets,
            });
        }
        Ok(Self {
            dim,
            kind,
            hidden,
            layers,
            params,
        })
    }

    /// A stack whose every layer is the identity map.
    pub fn identity(dim: usize, n_layers: usize, kind: SublayerKind, hidden: usize) -> Result<Self, FlowError> {
        let mut s = Self::zeros(dim, n_layers, kind, hidden)?;
        let theta = kind.identity_theta();
        s.fill_biases(&theta);
        Ok(s)
    }

    /// Random initialisation: conditional-network weights uniform on
    /// `+-1/sqrt(fan_in)`, output biases at [`SublayerKind::initial_theta`].
    pub fn random_init<R: Rng + ?Sized>(
        dim: usize,
        n_layers: usize,
        kind: SublayerKind,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, FlowError> {
        let mut s = Self::zeros(dim, n_layers, kind, hidden)?;
        s.fill_biases(&kind.initial_theta());
        let layers = s.layers.clone();
        let values = s.params.values_mut();
        for layer in &layers {
            for net in &layer.cond_nets {
                let lim_in = 1.0 / (net.input_dim as f64).sqrt();
                for v in &mut values[net.weights_in.clone()] {
                    *v = rng.random_range(-lim_in..lim_in);
                }
                for v in &mut values[net.bias_in.clone()] {
                    *v = rng.random_range(-lim_in..lim_in);
                }
                let lim_out = 1.0 / (net.hidden as f64).sqrt();
                for v in &mut values[net.weights_out.clone()] {
                    *v = rng.random_range(-lim_out..lim_out);
                }
            }
        }
        Ok(s)
    }

    fn fill_biases(&mut self, theta: &[f64]) {
        let layers = self.layers.clone();
        let values = self.params.values_mut();
        for layer in &layers {
            values[layer.first_dim.clone()].copy_from_slice(theta);
            for net in &layer.cond_nets {
                values[net.bias_out.clone()].copy_from_slice(theta);
            }
        }
    }

    /// Rebuilds a stack from a stored parameter vector; fails if the vector
    /// does not match the layout implied by the shape.
    pub fn from_parts(
        dim: usize,
        n_layers: usize,
        kind: SublayerKind,
        hidden: usize,
        values: Vec<f64>,
    ) -> Result<Self, FlowError> {
        let mut s = Self::zeros(dim, n_layers, kind, hidden)?;
        if values.len() != s.params.len() {
            return Err(FlowError::Dimension {
                expected: s.params.len(),
                got: values.len(),
            });
        }
        s.params.values_mut().copy_from_slice(&values);
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> SublayerKind {
        self.kind
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[TriangularLayer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn layer(&self, j: usize) -> LayerRef<'_> {
        LayerRef {
            layout: &self.layers[j],
            params: self.params.values(),
        }
    }

    /// Pushes `y` through every layer; returns `T(y)` and the summed
    /// log-determinants.
    pub fn forward(&self, y: &[f64]) -> Result<(Vec<f64>, f64), FlowError> {
        if y.len() != self.dim {
            return Err(FlowError::Dimension {
                expected: self.dim,
                got: y.len(),
            });
        }
        let mut cur = y.to_vec();
        let mut next = vec![0.0; self.dim];
        let mut total = 0.0;
        for j in 0..self.layers.len() {
            total += self.layer(j).forward_into(&cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok((cur, total))
    }

    /// Log of the process density on the unit cube:
    /// `log eta(T(logit x)) + log det grad T + log |d logit x / dx|`.
    pub fn log_process_density(&self, x: &[f64]) -> Result<f64, FlowError> {
        let e = logit_embed(x);
        let (z, ld) = self.forward(&e.y)?;
        let v = log_std_normal(&z) + ld + e.log_jac;
        if !v.is_finite() {
            return Err(FlowError::NonFinite { what: "log process density" });
        }
        Ok(v)
    }
}

/// Image of a unit-cube point under the elementwise logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub y: Vec<f64>,
    /// `sum_k log(1/x_k + 1/(1 - x_k))`
    pub log_jac: f64,
    /// Coordinates that had to be clamped into `[1e-7, 1 - 1e-7]`.
    pub clamped: usize,
}

pub fn logit_embed(x: &[f64]) -> Embedded {
    let mut clamped = 0;
    let mut log_jac = 0.0;
    let y = x
        .iter()
        .map(|&v| {
            let c = v.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
            if c != v || v.is_nan() {
                clamped += 1;
            }
            log_jac -= (c * (1.0 - c)).ln();
            logit(c)
        })
        .collect();
    Embedded { y, log_jac, clamped }
}

/// Log density of the standard normal on `R^d`.
pub fn log_std_normal(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - z.len() as f64 * HALF_LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naf(m: usize) -> SublayerKind {
        SublayerKind::Naf { m }
    }

    #[test]
    fn logit_embed_examples() {
        let e = logit_embed(&[0.5]);
        assert_eq!(e.y, vec![0.0]);
        assert!((e.log_jac - 4f64.ln()).abs() < 1e-15);
        let e = logit_embed(&[0.5, 0.5]);
        assert!((e.log_jac - 2.0 * 4f64.ln()).abs() < 1e-15);
        let e = logit_embed(&[0.9]);
        assert!((e.y[0] - 2.197_224_577_336_219).abs() < 1e-12);
        assert!((e.log_jac - 2.407_945_608_651_872).abs() < 1e-12);
        assert_eq!(e.clamped, 0);
        assert_eq!(logit_embed(&[0.0, 1.0]).clamped, 2);
    }

    #[test]
    fn logit_jacobian_matches_finite_difference() {
        for &x in &[0.1, 0.37, 0.9] {
            let h = 1e-6;
            let fd = (logit(x + h) - logit(x - h)) / (2.0 * h);
            let e = logit_embed(&[x]);
            assert!((e.log_jac - fd.ln()).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_network_returns_bias() {
        let s = TransportStack::zeros(2, 1, naf(2), 3).unwrap();
        let mut s = s;
        let bias = s.layers[0].cond_nets[0].bias_out.clone();
        for (i, v) in s.params.values_mut()[bias].iter_mut().enumerate() {
            *v = i as f64 - 1.5;
        }
        let out = s.layer(0).cond_net(1).forward(&[17.0]).unwrap();
        assert_eq!(out.raw_theta, vec![-1.5, -0.5, 0.5, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn half_sigmoid_network() {
        // H = 1, one input, zero input weights: hidden unit is sigmoid(0) = 1/2
        let mut s = TransportStack::zeros(2, 1, SublayerKind::AffineAutoregressive, 1).unwrap();
        let net = s.layers[0].cond_nets[0].clone();
        let v = s.params.values_mut();
        for w in &mut v[net.weights_out.clone()] {
            *w = 2.0;
        }
        v[net.bias_out.clone()].copy_from_slice(&[0.25, -3.0]);
        let out = s.layer(0).cond_net(1).forward(&[0.8]).unwrap();
        assert_eq!(out.raw_theta, vec![1.25, -2.0]);
    }

    #[test]
    fn condnet_rejects_wrong_prefix() {
        let s = TransportStack::zeros(3, 1, naf(1), 4).unwrap();
        assert!(matches!(
            s.layer(0).cond_net(2).forward(&[0.1]),
            Err(FlowError::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn condnet_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = TransportStack::random_init(3, 1, naf(4), 64, &mut rng).unwrap();
        let layout = &s.layers[0].cond_nets[1];
        let p = s.params.values();
        let prefix = [0.3, -1.2];
        // independent oracle: explicit nested matrices
        let w_in: Vec<Vec<f64>> = (0..64)
            .map(|h| p[layout.weights_in.clone()][h * 2..h * 2 + 2].to_vec())
            .collect();
        let b_in = &p[layout.bias_in.clone()];
        let hidden: Vec<f64> = (0..64)
            .map(|h| {
                let a = w_in[h][0] * prefix[0] + w_in[h][1] * prefix[1] + b_in[h];
                1.0 / (1.0 + (-a).exp())
            })
            .collect();
        let w_out = &p[layout.weights_out.clone()];
        let b_out = &p[layout.bias_out.clone()];
        let expected: Vec<f64> = (0..12)
            .map(|j| (0..64).map(|h| w_out[j * 64 + h] * hidden[h]).sum::<f64>() + b_out[j])
            .collect();
        let got = s.layer(0).cond_net(2).forward(&prefix).unwrap().raw_theta;
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_layers() {
        for kind in [naf(1), naf(5), SublayerKind::AffineAutoregressive, SublayerKind::InverseAutoregressive] {
            let s = TransportStack::identity(2, 3, kind, 4).unwrap();
            let y = [0.37, -1.9];
            let (z, ld) = s.forward(&y).unwrap();
            assert!((z[0] - y[0]).abs() < 1e-12 && (z[1] - y[1]).abs() < 1e-12, "{kind:?}");
            assert!(ld.abs() < 1e-12);
        }
    }

    #[test]
    fn affine_layer_example() {
        let mut s = TransportStack::zeros(1, 1, SublayerKind::AffineAutoregressive, 0).unwrap();
        s.params.values_mut().copy_from_slice(&[1.0, 2f64.ln()]);
        let (z, ld) = s.layer(0).forward(&[3.0]).unwrap();
        assert!((z[0] - 7.0).abs() < 1e-12);
        assert!((ld - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn composite_affine_slopes_multiply() {
        let mut s = TransportStack::zeros(1, 2, SublayerKind::AffineAutoregressive, 0).unwrap();
        s.params.values_mut().copy_from_slice(&[0.0, 2f64.ln(), 0.0, 3f64.ln()]);
        let (z, ld) = s.forward(&[1.5]).unwrap();
        assert!((z[0] - 9.0).abs() < 1e-12);
        assert!((ld - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn identity_stack_log_density_examples() {
        let s = TransportStack::identity(1, 1, naf(3), 0).unwrap();
        let v = s.log_process_density(&[0.5]).unwrap();
        assert!((v - (4f64.ln() - HALF_LN_2PI)).abs() < 1e-14);
        assert!((v - 0.467_356).abs() < 1e-6, "{v}");
        let v = s.log_process_density(&[0.9]).unwrap();
        let y = 2.197_224_577_336_219_f64;
        let expected = -HALF_LN_2PI - 0.5 * y * y + (1.0 / 0.9 + 1.0 / 0.1f64).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v + 0.924_893).abs() < 1e-5);
    }

    #[test]
    fn triangularity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = TransportStack::random_init(3, 1, naf(6), 8, &mut rng).unwrap();
        let (z, _) = s.layer(0).forward(&[0.2, -0.7, 1.1]).unwrap();
        let (z2, _) = s.layer(0).forward(&[0.2, -0.7, -5.0]).unwrap();
        assert_eq!(z[0].to_bits(), z2[0].to_bits());
        assert_eq!(z[1].to_bits(), z2[1].to_bits());
        let (z3, _) = s.layer(0).forward(&[0.2, 2.0, 1.1]).unwrap();
        assert_eq!(z[0].to_bits(), z3[0].to_bits());
    }

    #[test]
    fn layer_log_det_matches_finite_difference_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = TransportStack::random_init(2, 1, naf(8), 16, &mut rng).unwrap();
        let y = [0.4, -0.3];
        let (_, ld) = s.layer(0).forward(&y).unwrap();
        let h = 1e-6;
        let mut jac = [[0.0; 2]; 2];
        for c in 0..2 {
            let mut up = y;
            up[c] += h;
            let mut dn = y;
            dn[c] -= h;
            let (zu, _) = s.layer(0).forward(&up).unwrap();
            let (zd, _) = s.layer(0).forward(&dn).unwrap();
            for r in 0..2 {
                jac[r][c] = (zu[r] - zd[r]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        assert!(((det.ln() - ld) / ld.abs().max(1.0)).abs() < 1e-4);
        assert!((det - ld.exp()).abs() / det < 1e-4);
    }

    #[test]
    fn layout_is_bijective() {
        let s = TransportStack::zeros(3, 2, naf(4), 5).unwrap();
        assert!(s.params.layout_is_bijective());
        // per layer: 12 free + (5*1 + 5 + 60 + 12) + (5*2 + 5 + 60 + 12)
        assert_eq!(s.params.len(), 2 * (12 + 82 + 87));
    }

    #[test]
    fn rejects_empty_stack_and_zero_width() {
        assert!(TransportStack::zeros(2, 0, naf(2), 4).is_err());
        assert!(TransportStack::zeros(2, 1, naf(0), 4).is_err());
    }
}
