//! Preprocessing: windowing, subject-wise split, undersampling and channel-wise
//! z-normalization.
//!
//! Every seeded step sorts its input by subject id first, so results never
//! depend on manifest order.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recording::SubjectRecording;
use crate::error::{Error, Result};
use crate::model::CLASSES;
use crate::tensor::Tensor;

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub subject_id: String,
    pub label: usize,
    /// `channels × window_len`.
    pub data: Tensor,
}

/// Window length and hop in samples for a sampling rate.
pub fn window_geometry(window_s: f64, overlap: f64, sampling_rate_hz: u32) -> Result<(usize, usize)> {
    if !(window_s > 0.0) || !window_s.is_finite() {
        return Err(Error::arg(format!("window length {window_s} s must be positive")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::arg(format!("overlap {overlap} must lie in [0, 1)")));
    }
    let w = (window_s * f64::from(sampling_rate_hz)).round() as usize;
    let h = (w as f64 * (1.0 - overlap)).round() as usize;
    if w == 0 || h == 0 {
        return Err(Error::arg(format!(
            "window {window_s} s at {sampling_rate_hz} Hz with overlap {overlap} gives W={w}, H={h}"
        )));
    }
    Ok((w, h))
}

/// Start offsets of every window of length `w` that fits in `samples`.
pub fn window_starts(samples: usize, w: usize, h: usize) -> Vec<usize> {
    if samples < w || h == 0 {
        return Vec::new();
    }
    (0..=(samples - w) / h).map(|i| i * h).collect()
}

/// Cuts a recording into overlapping windows. A recording shorter than one
/// window yields no windows and logs a warning.
pub fn window_signal(rec: &SubjectRecording, window_s: f64, overlap: f64) -> Result<Vec<Window>> {
    let (w, h) = window_geometry(window_s, overlap, rec.sampling_rate_hz)?;
    let starts = window_starts(rec.samples(), w, h);
    if starts.is_empty() {
        log::warn!(
            "subject {}: {} samples is shorter than one {w}-sample window",
            rec.subject_id,
            rec.samples()
        );
    }
    Ok(starts
        .into_iter()
        .map(|s| {
            let mut data = Tensor::zeros(rec.channels(), w);
            for c in 0..rec.channels() {
                data.row_mut(c).copy_from_slice(&rec.signal.row(c)[s..s + w]);
            }
            Window {
                subject_id: rec.subject_id.clone(),
                label: rec.label,
                data,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Stratified subject-wise split.
///
/// The overall train count is `round(fraction · n)`. Each class gets
/// `floor(fraction · n_class)` and the leftover slots go to the classes with
/// the largest fractional remainders (seeded tie-break), so 5 + 5 subjects at
/// 0.7 give 4 + 3 or 3 + 4. Every class keeps at least one subject on each
/// side.
pub fn subject_split(subjects: &[(String, usize)], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<String>> = (0..CLASSES).map(|c| (c, Vec::new())).collect();
    let mut seen = BTreeSet::new();
    for (id, label) in subjects {
        if !seen.insert(id.as_str()) {
            return Err(Error::config(format!("subject `{id}` listed twice")));
        }
        by_class
            .get_mut(label)
            .ok_or_else(|| Error::config(format!("subject `{id}` has label {label}")))?
            .push(id.clone());
    }
    for (class, ids) in &mut by_class {
        if ids.len() < 2 {
            return Err(Error::config(format!(
                "class {class} has {} subject(s); stratified splitting needs at least 2",
                ids.len()
            )));
        }
        ids.sort();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (train_fraction * subjects.len() as f64).round() as usize;
    let mut quota: BTreeMap<usize, usize> = by_class
        .iter()
        .map(|(&c, ids)| (c, (train_fraction * ids.len() as f64).floor() as usize))
        .collect();
    let mut order: Vec<usize> = by_class.keys().copied().collect();
    order.shuffle(&mut rng);
    let remainder = |c: usize| {
        let x = train_fraction * by_class[&c].len() as f64;
        x - x.floor()
    };
    order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)));
    let assigned: usize = quota.values().sum();
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        *quota.get_mut(&c).expect("class present") += 1;
    }

    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (c, ids) in &by_class {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        let k = quota[c].clamp(1, ids.len() - 1);
        split.train.extend_from_slice(&ids[..k]);
        split.test.extend_from_slice(&ids[k..]);
    }
    split.train.sort();
    split.test.sort();
    Ok(split)
}

pub fn class_counts(windows: &[Window]) -> [usize; CLASSES] {
    let mut counts = [0; CLASSES];
    for w in windows {
        counts[w.label] += 1;
    }
    counts
}

/// Randomly drops majority-class windows down to the minority count. Kept
/// windows stay in their original order.
pub fn undersample(windows: Vec<Window>, seed: u64) -> Result<Vec<Window>> {
    let counts = class_counts(&windows);
    if counts.contains(&0) {
        return Err(Error::config(format!(
            "undersampling needs both classes, got counts {counts:?}"
        )));
    }
    let minority = *counts.iter().min().expect("two classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; windows.len()];
    for class in 0..CLASSES {
        if counts[class] == minority {
            continue;
        }
        let members: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].label == class).collect();
        let chosen: BTreeSet<usize> = index::sample(&mut rng, members.len(), minority).into_iter().collect();
        for (j, &i) in members.iter().enumerate() {
            keep[i] = chosen.contains(&j);
        }
    }
    Ok(windows
        .into_iter()
        .zip(keep)
        .filter_map(|(w, k)| k.then_some(w))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-channel mean and population std pooled over every window and time
/// point. Std is floored at [`STD_FLOOR`].
pub fn zscore_fit(windows: &[Window]) -> Result<ZScoreStats> {
    let first = windows
        .first()
        .ok_or_else(|| Error::arg("cannot fit z-score statistics on no windows"))?;
    let channels = first.data.rows();
    if windows.iter().any(|w| w.data.rows() != channels) {
        return Err(Error::arg("windows disagree on channel count"));
    }
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    for c in 0..channels {
        let n: usize = windows.iter().map(|w| w.data.cols()).sum();
        let m = windows.iter().map(|w| w.data.row(c).iter().sum::<f64>()).sum::<f64>() / n as f64;
        let var = windows
            .iter()
            .map(|w| w.data.row(c).iter().map(|x| (x - m) * (x - m)).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        mean[c] = m;
        std[c] = var.sqrt().max(STD_FLOOR);
    }
    Ok(ZScoreStats { mean, std })
}

pub fn zscore_tensor(x: &Tensor, stats: &ZScoreStats) -> Result<Tensor> {
    if x.rows() != stats.mean.len() || stats.std.len() != stats.mean.len() {
        return Err(Error::arg(format!(
            "statistics cover {} channels, data has {}",
            stats.mean.len(),
            x.rows()
        )));
    }
    let mut out = x.clone();
    for c in 0..x.rows() {
        let (m, s) = (stats.mean[c], stats.std[c].max(STD_FLOOR));
        for v in out.row_mut(c) {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

pub fn zscore_apply(windows: &[Window], stats: &ZScoreStats) -> Result<Vec<Window>> {
    windows
        .iter()
        .map(|w| {
            Ok(Window {
                subject_id: w.subject_id.clone(),
                label: w.label,
                data: zscore_tensor(&w.data, stats)?,
            })
        })
        .collect()
}

/// Normalized windows of one partition.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub windows: Vec<Window>,
    pub window_len: usize,
    /// Train-derived statistics already applied to `windows`.
    pub stats: ZScoreStats,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.label).collect()
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.windows.iter().map(|w| w.subject_id.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub window_s: f64,
    pub overlap: f64,
    pub train_fraction: f64,
    /// Share of the train subjects held out for checkpoint selection; 0
    /// disables the validation partition.
    pub validation_fraction: f64,
    pub undersample: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_s: 8.0,
            overlap: 0.9,
            train_fraction: 0.7,
            validation_fraction: 0.2,
            undersample: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub train: WindowedDataset,
    pub validation: Option<WindowedDataset>,
    pub test: WindowedDataset,
    pub train_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

/// Windows of the listed subjects, in subject-id order, not normalized.
pub fn window_subjects(
    recs: &[SubjectRecording],
    ids: &[String],
    window_s: f64,
    overlap: f64,
) -> Result<Vec<Window>> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let mut chosen: Vec<&SubjectRecording> =
        recs.iter().filter(|r| wanted.contains(r.subject_id.as_str())).collect();
    if chosen.len() != wanted.len() {
        let have: BTreeSet<&str> = chosen.iter().map(|r| r.subject_id.as_str()).collect();
        let missing: Vec<&str> = wanted.difference(&have).copied().collect();
        return Err(Error::config(format!("subjects not in the dataset: {missing:?}")));
    }
    chosen.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let per_subject = chosen
        .par_iter()
        .map(|r| window_signal(r, window_s, overlap))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_subject.into_iter().flatten().collect())
}

fn check_uniform(recs: &[SubjectRecording]) -> Result<()> {
    let first = recs.first().ok_or_else(|| Error::config("dataset has no subjects"))?;
    for r in recs {
        if r.channels() != first.channels() || r.sampling_rate_hz != first.sampling_rate_hz {
            return Err(Error::config(format!(
                "subject {} has {} channels at {} Hz, {} has {} at {} Hz",
                r.subject_id,
                r.channels(),
                r.sampling_rate_hz,
                first.subject_id,
                first.channels(),
                first.sampling_rate_hz
            )));
        }
    }
    Ok(())
}

fn labelled(recs: &[SubjectRecording], ids: Option<&[String]>) -> Vec<(String, usize)> {
    recs.iter()
        .filter(|r| ids.is_none_or(|ids| ids.contains(&r.subject_id)))
        .map(|r| (r.subject_id.clone(), r.label))
        .collect()
}

/// Full preprocessing: split subjects, window, undersample the training
/// windows, and normalize everything with train-only statistics.
pub fn prepare(recs: &[SubjectRecording], cfg: &PipelineConfig) -> Result<PreparedData> {
    check_uniform(recs)?;
    let mut recs = recs.to_vec();
    recs.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    let outer = subject_split(&labelled(&recs, None), cfg.train_fraction, cfg.seed)?;
    let (fit_ids, val_ids) = if cfg.validation_fraction > 0.0 {
        let inner = labelled(&recs, Some(&outer.train));
        match subject_split(&inner, 1.0 - cfg.validation_fraction, cfg.seed.wrapping_add(1)) {
            Ok(s) => (s.train, s.test),
            Err(Error::Config(reason)) => {
                log::warn!("no validation partition: {reason}");
                (outer.train.clone(), Vec::new())
            }
            Err(e) => return Err(e),
        }
    } else {
        (outer.train.clone(), Vec::new())
    };

    let mut train = window_subjects(&recs, &fit_ids, cfg.window_s, cfg.overlap)?;
    if train.is_empty() {
        return Err(Error::config("training subjects produced no windows"));
    }
    if cfg.undersample {
        train = undersample(train, cfg.seed.wrapping_add(2))?;
    }
    let stats = zscore_fit(&train)?;
    let window_len = train[0].data.cols();
    let dataset = |windows: Vec<Window>| -> Result<WindowedDataset> {
        Ok(WindowedDataset {
            windows: zscore_apply(&windows, &stats)?,
            window_len,
            stats: stats.clone(),
        })
    };
    let test = window_subjects(&recs, &outer.test, cfg.window_s, cfg.overlap)?;
    if test.is_empty() {
        return Err(Error::config("test subjects produced no windows"));
    }
    let validation = if val_ids.is_empty() {
        None
    } else {
        Some(dataset(window_subjects(&recs, &val_ids, cfg.window_s, cfg.overlap)?)?)
    };
    Ok(PreparedData {
        train: dataset(train)?,
        validation,
        test: dataset(test)?,
        train_subjects: fit_ids,
        validation_subjects: val_ids,
        test_subjects: outer.test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: usize, samples: usize) -> SubjectRecording {
        let signal = Tensor::from_vec(1, samples, (0..samples).map(|i| i as f64).collect()).unwrap();
        SubjectRecording::new(id, label, 250, signal).unwrap()
    }

    fn window(label: usize, v: f64) -> Window {
        Window {
            subject_id: format!("s{v}"),
            label,
            data: Tensor::from_vec(1, 1, vec![v]).unwrap(),
        }
    }

    #[test]
    fn worked_window_counts() {
        for (samples, expected) in [(2000, 1), (2200, 2), (1999, 0)] {
            let w = window_signal(&rec("a", 0, samples), 8.0, 0.9).unwrap();
            assert_eq!(w.len(), expected, "{samples} samples");
        }
        let w = window_signal(&rec("a", 0, 2200), 8.0, 0.9).unwrap();
        assert_eq!(w[1].data.get(0, 0), 200.0);
        assert_eq!(w[1].data.cols(), 2000);
    }

    #[test]
    fn hop_rounding() {
        assert_eq!(window_geometry(8.0, 0.9, 256).unwrap(), (2048, 205));
        assert!(window_geometry(8.0, 1.0, 256).is_err());
    }

    #[test]
    fn ten_subject_split() {
        let subjects: Vec<(String, usize)> = (0..10).map(|i| (format!("s{i:02}"), i % 2)).collect();
        for seed in 0..20 {
            let s = subject_split(&subjects, 0.7, seed).unwrap();
            assert_eq!((s.train.len(), s.test.len()), (7, 3));
            let per_class: Vec<usize> = (0..2)
                .map(|c| subjects.iter().filter(|(id, l)| *l == c && s.train.contains(id)).count())
                .collect();
            assert!(per_class == [4, 3] || per_class == [3, 4], "{per_class:?}");
            assert_eq!(s, subject_split(&subjects, 0.7, seed).unwrap());
        }
    }

    #[test]
    fn single_subject_class_is_config_error() {
        let subjects = vec![("a".to_string(), 0), ("b".to_string(), 0), ("c".to_string(), 1)];
        assert!(matches!(subject_split(&subjects, 0.7, 0), Err(Error::Config(_))));
    }

    #[test]
    fn undersampling_balances_and_preserves_order() {
        let windows: Vec<Window> = (0..50).map(|i| window(usize::from(i < 30), i as f64)).collect();
        let out = undersample(windows.clone(), 3).unwrap();
        assert_eq!(class_counts(&out), [20, 20]);
        let vals: Vec<f64> = out.iter().map(|w| w.data.get(0, 0)).collect();
        assert!(vals.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(out, undersample(windows, 3).unwrap());

        let balanced: Vec<Window> = (0..6).map(|i| window(i % 2, i as f64)).collect();
        assert_eq!(undersample(balanced.clone(), 9).unwrap(), balanced);
        assert!(matches!(
            undersample(vec![window(0, 1.0)], 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zscore_matches_pooled_oracle() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![4.0, -1.0, 0.5], vec![5.0, 5.0, 5.0]]).unwrap();
        let ws: Vec<Window> = [a, b]
            .into_iter()
            .map(|data| Window {
                subject_id: "x".into(),
                label: 0,
                data,
            })
            .collect();
        let stats = zscore_fit(&ws).unwrap();
        let pooled = [1.0, 2.0, 3.0, 4.0, -1.0, 0.5];
        let m = pooled.iter().sum::<f64>() / 6.0;
        let s = (pooled.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0).sqrt();
        assert!((stats.mean[0] - m).abs() < 1e-15);
        assert!((stats.std[0] - s).abs() < 1e-15);
        assert_eq!(stats.std[1], STD_FLOOR);
        let out = zscore_apply(&ws, &stats).unwrap();
        assert!(out.iter().all(|w| w.data.row(1).iter().all(|&v| v == 0.0)));
        let wrong = ZScoreStats {
            mean: vec![0.0],
            std: vec![1.0],
        };
        assert!(matches!(zscore_apply(&ws, &wrong), Err(Error::Argument(_))));
    }

    #[test]
    fn prepare_keeps_subjects_disjoint() {
        let recs: Vec<SubjectRecording> = (0..10)
            .map(|i| rec(&format!("s{i:02}"), i % 2, 2000 + 100 * i))
            .collect();
        let cfg = PipelineConfig {
            window_s: 4.0,
            ..PipelineConfig::default()
        };
        let p = prepare(&recs, &cfg).unwrap();
        let train = p.train.subjects();
        let test = p.test.subjects();
        assert!(train.is_disjoint(&test));
        let val = p.validation.as_ref().unwrap().subjects();
        assert!(val.is_disjoint(&train) && val.is_disjoint(&test));
        let b = class_counts(&p.train.windows);
        assert_eq!(b[0], b[1]);
        let mut shuffled = recs.clone();
        shuffled.reverse();
        assert_eq!(prepare(&shuffled, &cfg).unwrap(), p);
    }
}
