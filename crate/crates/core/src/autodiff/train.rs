//! Mini-batch training with NAdam.
//!
//! Per-sample gradients of a batch are computed in parallel and summed in
//! sample order, so results do not depend on the thread count.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nadam::{NAdamConfig, NAdamState};
use crate::checkpoint::Checkpoint;
use crate::data::Window;
use crate::error::{Error, Result};
use crate::eval::export::fmt_float;
use crate::eval::{summarize, Classifier};
use crate::model::QuanvNeXt;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,train_loss,val_accuracy,val_mcc,val_auc";
pub const INITIAL_CHECKPOINT: &str = "initial.ckpt";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch}.ckpt")
}

/// Which partition drives checkpoint selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Subjects held out from the training split.
    #[default]
    Validation,
    /// The test partition, as in the original protocol (leaks test
    /// information into model selection).
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            learning_rate,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_mcc: Option<f64>,
    pub val_auc: Option<f64>,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.epoch,
            fmt_float(self.train_loss),
            opt(self.val_accuracy),
            opt(self.val_mcc),
            opt(self.val_auc)
        )
    }

    /// Selection key: accuracy, then MCC.
    fn score(&self) -> Option<(f64, f64)> {
        Some((self.val_accuracy?, self.val_mcc.unwrap_or(0.0)))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: QuanvNeXt,
    pub history: Vec<EpochMetrics>,
    /// Best epoch on the evaluation set, when one was given.
    pub best_epoch: Option<usize>,
}

/// Mean loss and mean gradient of a batch.
pub fn batch_gradient(model: &QuanvNeXt, batch: &[&Window]) -> Result<(f64, Vec<f64>)> {
    let per_sample: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|w| model.loss_and_gradient(&w.data, w.label))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.config().n_params()];
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    for g in &mut grad {
        *g /= n;
    }
    Ok((loss / n, grad))
}

/// Class probabilities for every window.
pub fn predict<M: Classifier + ?Sized>(model: &M, windows: &[Window]) -> Result<Vec<Vec<f64>>> {
    windows.par_iter().map(|w| model.probabilities(&w.data)).collect()
}

fn evaluate(model: &QuanvNeXt, windows: Option<&[Window]>) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
    match windows {
        Some(ws) if !ws.is_empty() => {
            let probs = predict(model, ws)?;
            let labels: Vec<usize> = ws.iter().map(|w| w.label).collect();
            let s = summarize(&probs, &labels)?;
            Ok((Some(s.accuracy), Some(s.mcc), s.auc))
        }
        _ => Ok((None, None, None)),
    }
}

/// Trains `model` in place of a copy. `on_epoch` runs once with epoch 0 and
/// the initial model, then after every epoch.
pub fn train(
    model: QuanvNeXt,
    train_set: &[Window],
    eval_set: Option<&[Window]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &QuanvNeXt, Option<&EpochMetrics>) -> Result<()>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::arg(format!("learning rate {} must be positive", cfg.learning_rate)));
    }
    let mut model = model;
    let mut params = model.params();
    let mut opt = NAdamState::new(NAdamConfig::new(cfg.learning_rate), params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, (f64, f64))> = None;

    on_epoch(0, &model, None)?;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            opt.step(&mut params, &grad)?;
            model.set_params(&params)?;
        }
        let (val_accuracy, val_mcc, val_auc) = evaluate(&model, eval_set)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
            val_mcc,
            val_auc,
        };
        if let Some(score) = m.score() {
            if best.is_none_or(|(_, b)| score.0 > b.0 || (score.0 == b.0 && score.1 > b.1)) {
                best = Some((epoch, score));
            }
        }
        on_epoch(epoch, &model, Some(&m))?;
        history.push(m);
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: best.map(|(e, _)| e),
    })
}

/// Writes `initial.ckpt`, `epoch_{n}.ckpt` and `metrics.csv` into a run
/// directory as training progresses.
pub struct RunWriter {
    dir: PathBuf,
    template: Checkpoint,
    metrics: BufWriter<File>,
}

impl RunWriter {
    /// `template` carries the metadata (pipeline, subjects, normalization)
    /// copied into every checkpoint.
    pub fn create(dir: &Path, template: Checkpoint) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut metrics = BufWriter::new(file);
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            template,
            metrics,
        })
    }

    pub fn record(&mut self, epoch: usize, model: &QuanvNeXt, metrics: Option<&EpochMetrics>) -> Result<()> {
        let mut ck = self.template.clone();
        ck.model = model.clone();
        ck.meta.model = model.config().clone();
        ck.meta.epoch = epoch;
        let name = if epoch == 0 {
            INITIAL_CHECKPOINT.to_string()
        } else {
            checkpoint_name(epoch)
        };
        ck.save(&self.dir.join(name))?;
        if let Some(m) = metrics {
            let path = self.dir.join(METRICS_FILE);
            writeln!(self.metrics, "{}", m.csv_row()).map_err(|e| Error::io(&path, e))?;
            self.metrics.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
