//! Metrics, uncertainty and explainability exports against independent
//! references.

mod common;

use common::{auc_reference, ece_reference, mcc_reference};
use quanvnext::data::{prepare, synth_generate, PipelineConfig};
use quanvnext::eval::{
    auc_roc, ece, mcc, pca_2d, perturb_predict, stft_spectrogram, uncertainty_report, Classifier, ConfusionCounts,
};
use quanvnext::model::{build_model, ModelConfig, Preset};
use quanvnext::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

fn random_set(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>) {
    let n = rng.gen_range(2..60);
    let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    // coarse grids produce ties
    let levels = [4.0, 20.0, 1e6][rng.gen_range(0..3)];
    let scores = (0..n).map(|_| (rng.gen::<f64>() * levels).floor() / levels).collect();
    (scores, labels)
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let (scores, labels) = random_set(&mut rng);
        let predicted: Vec<usize> = scores.iter().map(|&s| usize::from(s >= 0.5)).collect();
        let c = ConfusionCounts::from_predictions(&predicted, &labels).unwrap();
        assert!((mcc(&c) - mcc_reference(&predicted, &labels)).abs() <= 1e-12);
        assert!((auc_roc(&scores, &labels).unwrap() - auc_reference(&scores, &labels)).abs() <= 1e-12);
        let conf: Vec<f64> = scores.iter().map(|&s| s.max(1.0 - s)).collect();
        let ok: Vec<bool> = predicted.iter().zip(&labels).map(|(p, l)| p == l).collect();
        assert!((ece(&conf, &ok, 10).unwrap() - ece_reference(&conf, &ok, 10)).abs() <= 1e-12);
    }
}

#[test]
fn auc_ignores_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (scores, labels) = random_set(&mut rng);
        let base = auc_roc(&scores, &labels).unwrap();
        for f in [|s: f64| s.exp(), |s: f64| 3.0 * s - 7.0, |s: f64| s.powi(3)] {
            let t: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            assert_eq!(auc_roc(&t, &labels).unwrap(), base);
        }
    }
}

#[test]
fn mcc_symmetric_under_label_swap() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..500 {
        let c = ConfusionCounts {
            tp: rng.gen_range(0..50),
            tn: rng.gen_range(0..50),
            fp: rng.gen_range(0..50),
            fn_: rng.gen_range(0..50),
        };
        let swapped = ConfusionCounts {
            tp: c.tn,
            tn: c.tp,
            fp: c.fn_,
            fn_: c.fp,
        };
        assert_eq!(mcc(&c), mcc(&swapped));
        assert!((-1.0..=1.0).contains(&mcc(&c)));
    }
}

/// Logits `(0, w·mean(x))`.
struct Linear(f64);

impl Classifier for Linear {
    fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(vec![0.0, self.0 * x.data().iter().sum::<f64>() / x.data().len() as f64])
    }
}

#[test]
fn linear_surrogate_uncertainty_matches_propagation() {
    let (w, eps, n) = (3.0, 0.4, 10_000);
    let x = Tensor::from_vec(2, 4, vec![0.1, -0.2, 0.3, 0.0, 0.05, 0.2, -0.1, 0.15]).unwrap();
    let m = x.data().iter().sum::<f64>() / 8.0;
    // logit ~ N(w·m, (w·ε/√8)²); std of sigmoid(logit) by quadrature
    let (mu, sd) = (w * m, w * eps / 8f64.sqrt());
    let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
    let grid = 20_001;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 0..grid {
        let z = -10.0 + 20.0 * i as f64 / (grid - 1) as f64;
        let pdf = (-0.5 * z * z).exp();
        let p = sigmoid(mu + sd * z);
        s0 += pdf;
        s1 += pdf * p;
        s2 += pdf * p * p;
    }
    let analytic = (s2 / s0 - (s1 / s0).powi(2)).sqrt();
    let got = perturb_predict(&Linear(w), &x, eps, n, 9).unwrap();
    // Monte-Carlo standard error of a std estimate is about σ/√(2n)
    let se = analytic / (2.0 * n as f64).sqrt();
    assert!((got.uncertainty - analytic).abs() < 4.0 * se, "{} vs {analytic}", got.uncertainty);
}

#[test]
fn uncertainty_grows_with_epsilon() {
    let recs = synth_generate(3, 4, 160, 6.25, 11).unwrap();
    let cfg = PipelineConfig {
        window_s: 3.125,
        overlap: 0.5,
        validation_fraction: 0.0,
        ..PipelineConfig::default()
    };
    let data = prepare(&recs, &cfg).unwrap();
    let test: Vec<_> = data.test.windows.iter().take(8).cloned().collect();
    let mut wins = 0;
    for seed in 0..30 {
        let model = build_model(ModelConfig::preset(Preset::Dataset2).with_input(4, 500), seed).unwrap();
        let r = uncertainty_report(&model, &test, &[0.1, 0.01], 8, seed).unwrap();
        let mean = |i: usize| {
            let (c, w) = (r[i].mean_uncertainty_correct, r[i].mean_uncertainty_incorrect);
            let nc = (r[i].accuracy * test.len() as f64).round();
            (c.unwrap_or(0.0) * nc + w.unwrap_or(0.0) * (test.len() as f64 - nc)) / test.len() as f64
        };
        wins += usize::from(mean(0) >= mean(1));
    }
    assert!(wins >= 28, "{wins}/30");
}

#[test]
fn stft_matches_direct_dft() {
    let (window, hop, k) = (64, 8, 5);
    let signal: Vec<f64> = (0..200).map(|t| (TAU * k as f64 * t as f64 / window as f64).sin()).collect();
    let spec = stft_spectrogram(&signal, window, hop).unwrap();
    assert_eq!(spec.shape(), ((200 - window) / hop + 1, window / 2 + 1));
    for f in 0..spec.rows() {
        let frame = &signal[f * hop..f * hop + window];
        let row = spec.row(f);
        for (bin, &got) in row.iter().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &x) in frame.iter().enumerate() {
                let w = 0.5 - 0.5 * (TAU * n as f64 / window as f64).cos();
                let a = -TAU * (bin * n) as f64 / window as f64;
                re += x * w * a.cos();
                im += x * w * a.sin();
            }
            assert!((got - re.hypot(im)).abs() < 1e-9);
        }
        // Hann spreads a bin-centred tone over bins k−1, k, k+1 as 1/2 : 1 : 1/2
        // in magnitude, so the centre bin holds exactly 2/3 of the energy
        let energy: f64 = row.iter().map(|v| v * v).sum();
        assert!((row[k] * row[k] / energy - 2.0 / 3.0).abs() < 1e-9);
        let lobe: f64 = row[k - 1..=k + 1].iter().map(|v| v * v).sum();
        assert!(lobe / energy > 0.999_999);
    }
    let zero = stft_spectrogram(&[0.0; 100], window, hop).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn pca_separates_two_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rows = Vec::new();
    for c in 0..2 {
        for _ in 0..20 {
            let centre = if c == 0 { -5.0 } else { 5.0 };
            rows.push(vec![centre + rng.gen_range(-1.0..1.0), centre + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        }
    }
    let scores = pca_2d(&rows).unwrap();
    let mean = |r: std::ops::Range<usize>| scores[r.clone()].iter().map(|s| s[0]).sum::<f64>() / r.len() as f64;
    let (a, b) = (mean(0..20), mean(20..40));
    assert!((a - b).abs() > 10.0);
    let (lo, hi) = if a < b { (0..20, 20..40) } else { (20..40, 0..20) };
    let max_lo = scores[lo].iter().map(|s| s[0]).fold(f64::MIN, f64::max);
    let min_hi = scores[hi].iter().map(|s| s[0]).fold(f64::MAX, f64::min);
    assert!(max_lo < min_hi);
}

#[test]
fn synthetic_hc_windows_carry_more_alpha_power() {
    let recs = synth_generate(5, 4, 160, 20.0, 3).unwrap();
    let (window, hop) = (160, 160);
    // 1 Hz bins; the 10 Hz band is bins 9..=11
    let band = |row: &[f64]| row[9..=11].iter().map(|v| v * v).sum::<f64>();
    let mut powers = [Vec::new(), Vec::new()];
    for r in &recs {
        for c in 0..r.channels() {
            let spec = stft_spectrogram(r.signal.row(c), window, hop).unwrap();
            for f in 0..spec.rows() {
                powers[r.label].push(band(spec.row(f)));
            }
        }
    }
    // every HC window against every MDD window
    let (hc, mdd) = (&powers[0], &powers[1]);
    let wins = hc.iter().flat_map(|a| mdd.iter().map(move |b| a > b)).filter(|&w| w).count();
    let share = wins as f64 / (hc.len() * mdd.len()) as f64;
    assert!(share >= 0.95, "{share}");
}
