//! Binary classification metrics. Class 1 (MDD) is the positive class.

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::arg(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &l) in predicted.iter().zip(labels) {
            match (p == 1, l == 1) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

/// Matthews correlation coefficient; 0 when any margin is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

/// Area under the ROC curve as the normalized Mann–Whitney U statistic:
/// the share of (positive, negative) pairs ranked correctly, ties counting ½.
pub fn auc_roc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::arg("scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::arg("AUC needs both classes"));
    }
    // twice the U statistic, kept integral
    let mut u2: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&k| labels[k] == 1).count() as u64;
        let neg = group.len() as u64 - pos;
        u2 += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Bin of a confidence among `n_bins` equal-width bins over [0, 1]; 1.0 goes
/// to the top bin.
pub fn confidence_bin(confidence: f64, n_bins: usize) -> usize {
    ((confidence * n_bins as f64).floor() as usize).min(n_bins - 1)
}

/// Expected calibration error: `Σ_m |B_m|/n · |acc(B_m) − conf(B_m)|`.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(Error::arg("confidences and correctness flags differ in length"));
    }
    if n_bins == 0 {
        return Err(Error::arg("ECE needs at least one bin"));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::arg(format!("confidence {c} outside [0, 1]")));
    }
    if confidences.is_empty() {
        return Ok(0.0);
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = confidence_bin(c, n_bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            m / n * (hits[b] as f64 / m - conf_sum[b] / m).abs()
        })
        .sum())
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // the bounds are exactly 0 / 1 at the extremes; rounding would miss them
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Accuracy, MCC and AUC of class-1 probabilities against labels. AUC is
/// `None` when only one class is present.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub mcc: f64,
    pub auc: Option<f64>,
    pub counts: ConfusionCounts,
}

pub fn summarize(probabilities: &[Vec<f64>], labels: &[usize]) -> Result<Summary> {
    let predicted: Vec<usize> = probabilities.iter().map(|p| argmax(p)).collect();
    let counts = ConfusionCounts::from_predictions(&predicted, labels)?;
    let scores: Vec<f64> = probabilities.iter().map(|p| p[1]).collect();
    let both = labels.contains(&0) && labels.contains(&1);
    Ok(Summary {
        accuracy: counts.accuracy(),
        mcc: mcc(&counts),
        auc: if both { Some(auc_roc(&scores, labels)?) } else { None },
        counts,
    })
}
