//! Training machinery: the reverse-mode tape, the loss, the optimizer and the
//! epoch loop.

mod nadam;
mod tape;
pub mod train;

pub use nadam::{NAdamConfig, NAdamState};
pub use tape::{Gradients, Tape, Var};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// `−log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}
