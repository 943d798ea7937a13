#![allow(dead_code)]

/// Central-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-5;

/// Absolute floor below which two gradient entries are both treated as zero;
/// this is the roundoff level of a central difference at `FD_STEP`.
pub const FD_FLOOR: f64 = 1e-8;

/// Central difference of `f` at `x` along every coordinate.
pub fn central_difference(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest elementwise `|a − b| / max(|a|, |b|)`, ignoring pairs that are
/// both under [`FD_FLOOR`].
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if a.abs().max(n.abs()) <= FD_FLOOR {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// MCC as the Pearson correlation of the predicted and true class indicators.
pub fn mcc_reference(predicted: &[usize], labels: &[usize]) -> f64 {
    let n = predicted.len() as f64;
    let p: Vec<f64> = predicted.iter().map(|&v| v as f64).collect();
    let l: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let (mp, ml) = (p.iter().sum::<f64>() / n, l.iter().sum::<f64>() / n);
    let cov: f64 = p.iter().zip(&l).map(|(a, b)| (a - mp) * (b - ml)).sum();
    let vp: f64 = p.iter().map(|a| (a - mp).powi(2)).sum();
    let vl: f64 = l.iter().map(|b| (b - ml).powi(2)).sum();
    if vp == 0.0 || vl == 0.0 {
        0.0
    } else {
        cov / (vp * vl).sqrt()
    }
}

/// Trapezoidal area under the empirical ROC curve, sweeping the threshold
/// down through every distinct score.
pub fn auc_reference(scores: &[f64], labels: &[usize]) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut area, mut prev_tpr, mut prev_fpr) = (0.0, 0.0, 0.0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l == 1).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l == 0).count() as f64;
        let (tpr, fpr) = (tp / pos, fp / neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

/// Expected calibration error with bins `[k/n, (k+1)/n)`, the last one closed.
pub fn ece_reference(confidences: &[f64], correct: &[bool], n_bins: usize) -> f64 {
    let total = confidences.len() as f64;
    let mut sum = 0.0;
    for k in 0..n_bins {
        let lo = k as f64 / n_bins as f64;
        let hi = (k + 1) as f64 / n_bins as f64;
        let members: Vec<usize> = (0..confidences.len())
            .filter(|&i| {
                let c = confidences[i];
                c >= lo && (c < hi || (k == n_bins - 1 && c <= 1.0))
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / m;
        let conf = members.iter().map(|&i| confidences[i]).sum::<f64>() / m;
        sum += m / total * (acc - conf).abs();
    }
    sum
}
