//! Gaussian-perturbation uncertainty: `x' = x + ε·N(0, 1)`, `n` copies per
//! window, mean softmax as the class estimate and the standard deviation of
//! the class-1 probability as the uncertainty.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::metrics::{argmax, ece, wilson_interval, Z_95};
use crate::autodiff::softmax;
use crate::data::Window;
use crate::error::{Error, Result};
use crate::model::QuanvNeXt;
use crate::tensor::Tensor;

pub const DEFAULT_COPIES: usize = 50;
pub const DEFAULT_EPSILONS: [f64; 3] = [0.1, 0.05, 0.01];
pub const ECE_BINS: usize = 10;

/// Anything mapping one window to class logits.
pub trait Classifier: Sync {
    fn logits(&self, x: &Tensor) -> Result<Vec<f64>>;

    fn probabilities(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }
}

impl Classifier for QuanvNeXt {
    fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub mean_probabilities: Vec<f64>,
    pub uncertainty: f64,
}

/// Mixes a base seed and an index into a new seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Copy `i` draws its noise from ChaCha8 stream `i` of `seed`, so results do
/// not depend on evaluation order.
pub fn perturb_predict<M: Classifier + ?Sized>(
    model: &M,
    x: &Tensor,
    epsilon: f64,
    n: usize,
    seed: u64,
) -> Result<Perturbation> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::arg(format!("epsilon {epsilon} must be finite and non-negative")));
    }
    if n == 0 {
        return Err(Error::arg("need at least one perturbed copy"));
    }
    let probs: Vec<Vec<f64>> = if epsilon == 0.0 {
        vec![model.probabilities(x)?; n]
    } else {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i);
                let mut noisy = x.clone();
                for v in noisy.data_mut() {
                    *v += epsilon * rng.sample::<f64, _>(StandardNormal);
                }
                model.probabilities(&noisy)
            })
            .collect::<Result<_>>()?
    };
    // running means stay exact when every copy agrees
    let classes = probs[0].len();
    let mut mean = vec![0.0; classes];
    for (k, p) in probs.iter().enumerate() {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += (v - *m) / (k + 1) as f64;
        }
    }
    let pos = classes - 1;
    let var = probs.iter().map(|p| (p[pos] - mean[pos]).powi(2)).sum::<f64>() / n as f64;
    Ok(Perturbation {
        mean_probabilities: mean,
        uncertainty: var.sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyRecord {
    pub epsilon: f64,
    pub n_samples: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `None` when no prediction falls in the group.
    pub mean_uncertainty_correct: Option<f64>,
    pub mean_uncertainty_incorrect: Option<f64>,
    pub ece: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One record per epsilon over a labelled window set.
pub fn uncertainty_report<M: Classifier + ?Sized>(
    model: &M,
    windows: &[Window],
    epsilons: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<UncertaintyRecord>> {
    if windows.is_empty() {
        return Err(Error::arg("uncertainty report needs at least one window"));
    }
    epsilons
        .iter()
        .enumerate()
        .map(|(e, &epsilon)| {
            let results: Vec<Perturbation> = windows
                .par_iter()
                .enumerate()
                .map(|(i, w)| {
                    let s = derive_seed(derive_seed(seed, e as u64), i as u64);
                    perturb_predict(model, &w.data, epsilon, n, s)
                })
                .collect::<Result<_>>()?;
            let mut correct_u = Vec::new();
            let mut incorrect_u = Vec::new();
            let mut confidences = Vec::with_capacity(windows.len());
            let mut flags = Vec::with_capacity(windows.len());
            for (w, r) in windows.iter().zip(&results) {
                let predicted = argmax(&r.mean_probabilities);
                let ok = predicted == w.label;
                if ok {
                    correct_u.push(r.uncertainty);
                } else {
                    incorrect_u.push(r.uncertainty);
                }
                confidences.push(r.mean_probabilities[predicted].clamp(0.0, 1.0));
                flags.push(ok);
            }
            let hits = correct_u.len() as u64;
            let total = windows.len() as u64;
            let (ci_low, ci_high) = wilson_interval(hits, total, Z_95);
            Ok(UncertaintyRecord {
                epsilon,
                n_samples: windows.len(),
                accuracy: hits as f64 / total as f64,
                ci_low,
                ci_high,
                mean_uncertainty_correct: mean(&correct_u),
                mean_uncertainty_incorrect: mean(&incorrect_u),
                ece: ece(&confidences, &flags, ECE_BINS)?,
            })
        })
        .collect()
}
