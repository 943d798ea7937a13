//! Seeded synthetic EEG-like recordings.
//!
//! Every channel carries unit-variance AR(1) background noise (a low-pass,
//! pink-ish spectrum). HC subjects (label 0) add a strong 10 Hz rhythm; MDD
//! subjects (label 1) add a strong 4 Hz rhythm and a weak 10 Hz one. Rhythm
//! amplitudes are scaled per subject by a factor in [0.8, 1.2], phases are
//! drawn per channel. Samples are rounded to `f32` so recordings survive the
//! on-disk format unchanged.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::recording::SubjectRecording;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const AR_COEFF: f64 = 0.9;
const STRONG: f64 = 1.5;
const WEAK: f64 = 0.3;
const AMPLITUDE_JITTER: f64 = 0.2;
/// Microvolt-like scale of the whole signal.
const SCALE: f64 = 10.0;

pub const HC_PREFIX: &str = "hc";
pub const MDD_PREFIX: &str = "mdd";

/// `n_per_class` subjects of each class, `channels × round(fs · duration_s)`
/// samples each, ordered by subject id.
pub fn synth_generate(
    n_per_class: usize,
    channels: usize,
    fs: u32,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<SubjectRecording>> {
    if n_per_class == 0 || channels == 0 || fs == 0 || !(duration_s > 0.0) {
        return Err(Error::arg("subject count, channels, fs and duration must be positive"));
    }
    let samples = (f64::from(fs) * duration_s).round() as usize;
    if samples == 0 {
        return Err(Error::arg("duration is shorter than one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recs = Vec::with_capacity(2 * n_per_class);
    for (label, prefix) in [(0, HC_PREFIX), (1, MDD_PREFIX)] {
        for i in 0..n_per_class {
            let scale = 1.0 + rng.gen_range(-AMPLITUDE_JITTER..=AMPLITUDE_JITTER);
            let rhythms: [(f64, f64); 2] = if label == 0 {
                [(10.0, STRONG * scale), (4.0, 0.0)]
            } else {
                [(10.0, WEAK * scale), (4.0, STRONG * scale)]
            };
            let mut signal = Tensor::zeros(channels, samples);
            for c in 0..channels {
                let phases: Vec<f64> = rhythms.iter().map(|_| rng.gen_range(0.0..TAU)).collect();
                let innovation = (1.0 - AR_COEFF * AR_COEFF).sqrt();
                let mut ar: f64 = rng.sample(StandardNormal);
                for (t, v) in signal.row_mut(c).iter_mut().enumerate() {
                    let time = t as f64 / f64::from(fs);
                    let rhythm: f64 = rhythms
                        .iter()
                        .zip(&phases)
                        .map(|((f, a), p)| a * (TAU * f * time + p).sin())
                        .sum();
                    *v = f64::from((SCALE * (ar + rhythm)) as f32);
                    let w: f64 = rng.sample(StandardNormal);
                    ar = AR_COEFF * ar + innovation * w;
                }
            }
            recs.push(SubjectRecording::new(format!("{prefix}-{i:03}"), label, fs, signal)?);
        }
    }
    Ok(recs)
}
