use super::{FlowError, SublayerKind};
use crate::diffkit::{sigmoid, sigmoid_pair};

/// Normalised exponentials of the first `m` raw NAF parameters.
pub fn naf_weights(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|t| (t - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Evaluates a univariate sublayer and its derivative in `x`.
pub fn sublayer_eval(x: f64, theta: &[f64], kind: SublayerKind) -> Result<(f64, f64), FlowError> {
    let (s, log_d) = sublayer_eval_log(x, theta, kind)?;
    Ok((s, log_d.exp()))
}

/// Like [`sublayer_eval`] but returns `log dS/dx`.
pub(crate) fn sublayer_eval_log(x: f64, theta: &[f64], kind: SublayerKind) -> Result<(f64, f64), FlowError> {
    if theta.len() != kind.n_params() {
        return Err(FlowError::Dimension {
            expected: kind.n_params(),
            got: theta.len(),
        });
    }
    let (s, log_d) = match kind {
        SublayerKind::Naf { m } => naf(x, theta, m),
        SublayerKind::AffineAutoregressive => (theta[0] + x * theta[1].exp(), theta[1]),
        SublayerKind::InverseAutoregressive => {
            let g = sigmoid(theta[1]);
            (g * x + sigmoid(-theta[1]) * theta[0], g.ln())
        }
    };
    if !(s.is_finite() && log_d.is_finite()) {
        return Err(FlowError::NonFinite { what: "sublayer output" });
    }
    Ok((s, log_d))
}

/// `logit(u)` with `u = sum_i w_i sigmoid(a_i x + b_i)`.
///
/// `u` and `1 - u` are accumulated separately from `sigmoid(t)` and
/// `sigmoid(-t)` so the logit keeps full precision when `u` saturates.
fn naf(x: f64, theta: &[f64], m: usize) -> (f64, f64) {
    let (w_raw, rest) = theta.split_at(m);
    let (a_raw, b) = rest.split_at(m);
    let max = w_raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut u = 0.0;
    let mut v = 0.0;
    let mut d = 0.0;
    for i in 0..m {
        let w = (w_raw[i] - max).exp();
        let a = a_raw[i].exp();
        let t = a * x + b[i];
        let (p, q) = sigmoid_pair(t);
        z += w;
        u += w * p;
        v += w * q;
        d += w * a * p * q;
    }
    let u = (u / z).max(f64::MIN_POSITIVE);
    let v = (v / z).max(f64::MIN_POSITIVE);
    let d = (d / z).max(f64::MIN_POSITIVE);
    let (lu, lv) = (u.ln(), v.ln());
    (lu - lv, d.ln() - lu - lv)
}
