//! Skip-gram negative-sampling objective for one training batch.
//!
//! For a target vector `u`, positive context `v_c` and negatives `v_l`:
//!
//! ```text
//! log p = log σ(u·v_c) + Σ_l log σ(−u·v_l)
//! ∂/∂u   = (1 − σ(u·v_c)) v_c − Σ_l σ(u·v_l) v_l
//! ∂/∂v_c = (1 − σ(u·v_c)) u
//! ∂/∂v_l = −σ(u·v_l) u
//! ```
//!
//! Gradients are ascent directions on the log-probability.

use super::{ModelError, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(u: &[f64], context: &[f64], negatives: &[&[f64]]) -> Result<()> {
    let expected = u.len();
    std::iter::once(context)
        .chain(negatives.iter().copied())
        .find(|v| v.len() != expected)
        .map_or(Ok(()), |v| {
            Err(ModelError::DimensionMismatch { expected, got: v.len() })
        })
}

/// Per-vector gradient coefficients and the batch log-probability.
///
/// `∂/∂v_k = coef_k · u` and `∂/∂u = Σ_k coef_k · v_k`, with the positive
/// context first. `coefs` is cleared and refilled.
pub(crate) fn coefficients(
    u: &[f64],
    context: &[f64],
    negatives: impl Iterator<Item = impl AsRef<[f64]>>,
    coefs: &mut Vec<f64>,
) -> f64 {
    coefs.clear();
    let s = dot(u, context);
    let mut log_prob = log_sigmoid(s);
    coefs.push(1.0 - sigmoid(s));
    for v in negatives {
        let s = dot(u, v.as_ref());
        log_prob += log_sigmoid(-s);
        coefs.push(-sigmoid(s));
    }
    log_prob
}

pub fn batch_log_prob(u: &[f64], context: &[f64], negatives: &[&[f64]]) -> Result<f64> {
    check_dims(u, context, negatives)?;
    let mut coefs = Vec::with_capacity(negatives.len() + 1);
    Ok(coefficients(u, context, negatives.iter(), &mut coefs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub target: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn batch_gradients(u: &[f64], context: &[f64], negatives: &[&[f64]]) -> Result<BatchGradients> {
    check_dims(u, context, negatives)?;
    let mut coefs = Vec::with_capacity(negatives.len() + 1);
    coefficients(u, context, negatives.iter(), &mut coefs);
    let mut target = vec![0.0; u.len()];
    for (coef, v) in coefs
        .iter()
        .zip(std::iter::once(context).chain(negatives.iter().copied()))
    {
        for (g, x) in target.iter_mut().zip(v) {
            *g += coef * x;
        }
    }
    let scaled = |c: f64| u.iter().map(|x| c * x).collect::<Vec<_>>();
    Ok(BatchGradients {
        target,
        context: scaled(coefs[0]),
        negatives: coefs[1..].iter().map(|&c| scaled(c)).collect(),
    })
}
