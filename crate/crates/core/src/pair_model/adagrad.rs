//! AdaGrad, ascent form: `acc += g²; θ += lr · g / (√acc + ε)`.

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Applies one AdaGrad ascent step in place.
///
/// # Panics
///
/// If the three slices differ in length.
pub fn adagrad_step(params: &mut [f64], grads: &[f64], accum: &mut [f64], lr: f64, eps: f64) {
    assert!(params.len() == grads.len() && grads.len() == accum.len());
    for ((p, &g), a) in params.iter_mut().zip(grads).zip(accum.iter_mut()) {
        *a += g * g;
        *p += lr * g / (a.sqrt() + eps);
    }
}

/// Squared-gradient accumulators for a target and a context matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    pub target: Vec<f64>,
    pub context: Vec<f64>,
    pub epsilon: f64,
}

impl AdaGradState {
    pub fn zeros(len: usize, epsilon: f64) -> Self {
        AdaGradState {
            target: vec![0.0; len],
            context: vec![0.0; len],
            epsilon,
        }
    }
}
