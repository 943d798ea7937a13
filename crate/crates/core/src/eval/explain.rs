//! Explainability exports: stage activations, short-time spectra of the mean
//! activation, and projection-layer embeddings with a PCA view.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::data::Window;
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, QuanvNeXt, CLASSES};
use crate::tensor::Tensor;

pub const DEFAULT_STFT_WINDOW: usize = 64;
pub const DEFAULT_STFT_HOP: usize = 8;

/// A point in the network whose output can be exported. Blocks are numbered
/// from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Embedding,
    Block(usize),
    Projection,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(Stage::Embedding),
            "projection" => Ok(Stage::Projection),
            _ => s
                .strip_prefix("block_")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(Stage::Block)
                .ok_or_else(|| {
                    Error::arg(format!(
                        "unknown stage `{s}` (expected embedding, block_<n> or projection)"
                    ))
                }),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Embedding => f.write_str("embedding"),
            Stage::Block(n) => write!(f, "block_{n}"),
            Stage::Projection => f.write_str("projection"),
        }
    }
}

impl Stage {
    fn select(self, trace: ForwardTrace) -> Result<Tensor> {
        match self {
            Stage::Embedding => Ok(trace.embedding),
            Stage::Projection => Ok(trace.projection),
            Stage::Block(n) => {
                let count = trace.blocks.len();
                trace
                    .blocks
                    .into_iter()
                    .nth(n.wrapping_sub(1))
                    .ok_or_else(|| Error::arg(format!("block_{n} does not exist (model has {count})")))
            }
        }
    }

    pub fn validate(self, model: &QuanvNeXt) -> Result<()> {
        match self {
            Stage::Block(n) if n == 0 || n > model.blocks().len() => Err(Error::arg(format!(
                "block_{n} does not exist (model has {})",
                model.blocks().len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Mean and population standard deviation over a group of equally shaped
/// tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub count: usize,
    pub mean: Tensor,
    pub std: Tensor,
}

pub fn group_stats(tensors: &[&Tensor]) -> Result<GroupStats> {
    let first = tensors.first().ok_or_else(|| Error::arg("no tensors to summarize"))?;
    let (r, c) = first.shape();
    if tensors.iter().any(|t| t.shape() != (r, c)) {
        return Err(Error::arg("tensors differ in shape"));
    }
    let n = tensors.len() as f64;
    let mut mean = Tensor::zeros(r, c);
    for t in tensors {
        mean.add_assign(t);
    }
    let mean = mean.map(|v| v / n);
    let mut var = Tensor::zeros(r, c);
    for t in tensors {
        for ((v, x), m) in var.data_mut().iter_mut().zip(t.data()).zip(mean.data()) {
            *v += (x - m) * (x - m);
        }
    }
    Ok(GroupStats {
        count: tensors.len(),
        mean,
        std: var.map(|v| (v / n).sqrt()),
    })
}

/// Channel whose values vary most across samples: per-position variance over
/// samples, averaged over positions. First channel wins ties.
pub fn max_variance_channel(tensors: &[&Tensor]) -> Result<usize> {
    let stats = group_stats(tensors)?;
    let score: Vec<f64> = (0..stats.std.rows())
        .map(|c| stats.std.row(c).iter().map(|s| s * s).sum::<f64>())
        .collect();
    Ok(super::metrics::argmax(&score))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationExport {
    pub stage: Stage,
    pub activations: Vec<Tensor>,
    /// Indexed by class label; `None` for a class without samples.
    pub per_class: Vec<Option<GroupStats>>,
    pub selected_channel: usize,
}

pub fn export_activations(model: &QuanvNeXt, samples: &[Window], stage: Stage) -> Result<ActivationExport> {
    stage.validate(model)?;
    if samples.is_empty() {
        return Err(Error::arg("no samples to export"));
    }
    let activations: Vec<Tensor> = samples
        .par_iter()
        .map(|w| stage.select(model.trace(&w.data)?))
        .collect::<Result<_>>()?;
    let per_class = (0..CLASSES)
        .map(|class| {
            let group: Vec<&Tensor> = samples
                .iter()
                .zip(&activations)
                .filter(|(w, _)| w.label == class)
                .map(|(_, a)| a)
                .collect();
            if group.is_empty() {
                Ok(None)
            } else {
                group_stats(&group).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let all: Vec<&Tensor> = activations.iter().collect();
    let selected_channel = max_variance_channel(&all)?;
    Ok(ActivationExport {
        stage,
        activations,
        per_class,
        selected_channel,
    })
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Magnitude STFT with a periodic Hann window: `frames × (window/2 + 1)`,
/// `frames = ⌊(L − window)/hop⌋ + 1`.
pub fn stft_spectrogram(signal: &[f64], window: usize, hop: usize) -> Result<Tensor> {
    if window == 0 || hop == 0 {
        return Err(Error::arg("STFT window and hop must be positive"));
    }
    if signal.len() < window {
        return Err(Error::arg(format!(
            "signal of {} samples is shorter than the {window}-sample window",
            signal.len()
        )));
    }
    let frames = (signal.len() - window) / hop + 1;
    let bins = window / 2 + 1;
    let taper = hann(window);
    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut out = Tensor::zeros(frames, bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    for f in 0..frames {
        let start = f * hop;
        for (b, (x, w)) in buf.iter_mut().zip(signal[start..start + window].iter().zip(&taper)) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (o, b) in out.row_mut(f).iter_mut().zip(&buf) {
            *o = b.norm();
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingExport {
    pub subject_ids: Vec<String>,
    pub labels: Vec<usize>,
    /// One flattened projection output per sample.
    pub features: Vec<Vec<f64>>,
    /// First two principal-component scores per sample.
    pub pca: Vec<[f64; 2]>,
}

/// Scores on the first two principal components of the rows of `x`. Each
/// component's largest-magnitude loading is made positive so the output is
/// deterministic. Missing components (fewer than 2 features) are zero.
pub fn pca_2d(x: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = x.len();
    let m = x.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || x.iter().any(|r| r.len() != m) {
        return Err(Error::arg("PCA needs a non-empty matrix with equal-length rows"));
    }
    let data = DMatrix::from_fn(n, m, |i, j| x[i][j]);
    let means = data.row_mean();
    let centred = DMatrix::from_fn(n, m, |i, j| data[(i, j)] - means[j]);
    let cov = centred.transpose() * &centred / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut scores = vec![[0.0; 2]; n];
    for (k, &col) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(col).into_owned();
        let pivot = (0..m)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("m > 0");
        if v[pivot] < 0.0 {
            v = -v;
        }
        let proj = &centred * v;
        for i in 0..n {
            scores[i][k] = proj[i];
        }
    }
    Ok(scores)
}

pub fn export_embeddings(model: &QuanvNeXt, samples: &[Window]) -> Result<EmbeddingExport> {
    if samples.is_empty() {
        return Err(Error::arg("no samples to embed"));
    }
    let features: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|w| Ok(model.trace(&w.data)?.projection.into_data()))
        .collect::<Result<_>>()?;
    let pca = pca_2d(&features)?;
    Ok(EmbeddingExport {
        subject_ids: samples.iter().map(|w| w.subject_id.clone()).collect(),
        labels: samples.iter().map(|w| w.label).collect(),
        features,
        pca,
    })
}
