//! `quanvnext` command-line pipeline.

mod config;
mod outputs;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use quanvnext::autodiff::train::{predict, train, RunWriter, Selection, TrainConfig};
use quanvnext::checkpoint::Checkpoint;
use quanvnext::data::{
    load_manifest, prepare, synth_generate, window_subjects, write_dataset, zscore_apply, PipelineConfig,
    SubjectRecording, Window,
};
use quanvnext::eval::export::{
    write_activation_summary_csv, write_activations_csv, write_embeddings_csv, write_spectrogram_csv,
    write_uncertainty_csv,
};
use quanvnext::eval::{
    export_activations, export_embeddings, summarize, uncertainty_report, Stage, DEFAULT_COPIES, DEFAULT_EPSILONS,
    DEFAULT_STFT_HOP, DEFAULT_STFT_WINDOW,
};
use quanvnext::model::{build_model, BlockToggles, ModelConfig, Preset};

use outputs::Outputs;

#[derive(Parser, Debug)]
#[command(name = "quanvnext", version, about = "QuanvNeXt training and evaluation pipeline")]
#[command(args_override_self = true)]
struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// TOML file whose keys mirror the subcommand's long flags; flags given on
    /// the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic dataset (manifest plus one data file per subject).
    SynthData(SynthDataArgs),
    /// Train a model, writing a checkpoint per epoch and metrics.csv.
    Train(TrainArgs),
    /// Accuracy, MCC and AUC of a checkpoint on one partition.
    Eval(EvalArgs),
    /// Gaussian-perturbation uncertainty report.
    Uncertainty(UncertaintyArgs),
    /// Export activations, spectrograms and embeddings.
    Explain(ExplainArgs),
    /// Run the simulator-invariant and gradient self-checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug)]
struct SynthDataArgs {
    /// Subjects per class.
    #[arg(long, default_value_t = 6)]
    subjects: usize,
    /// Channels per recording.
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 160)]
    fs: u32,
    /// Recording length in seconds.
    #[arg(long, default_value_t = 40.0)]
    seconds: f64,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Where recordings come from: a manifest on disk or the synthetic generator.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset manifest (file, directory containing manifest.toml, or path
    /// without extension).
    #[arg(long, conflicts_with_all = ["synth_subjects", "synth_channels", "synth_fs", "synth_seconds", "synth_seed"])]
    manifest: Option<PathBuf>,
    /// Generate synthetic data in memory with this many subjects per class.
    #[arg(long)]
    synth_subjects: Option<usize>,
    /// Channels of the synthetic recordings.
    #[arg(long, requires = "synth_subjects")]
    synth_channels: Option<usize>,
    /// Sampling rate of the synthetic recordings in Hz.
    #[arg(long, requires = "synth_subjects")]
    synth_fs: Option<u32>,
    /// Length of each synthetic recording in seconds.
    #[arg(long, requires = "synth_subjects")]
    synth_seconds: Option<f64>,
    /// Seed of the synthetic generator.
    #[arg(long, requires = "synth_subjects")]
    synth_seed: Option<u64>,
}

impl DataArgs {
    fn load(&self) -> Result<(Vec<SubjectRecording>, serde_json::Value)> {
        match (&self.manifest, self.synth_subjects) {
            (Some(path), None) => {
                let recs = load_manifest(path)?;
                Ok((recs, json!({ "manifest": path })))
            }
            (None, Some(subjects)) => {
                let channels = self.synth_channels.unwrap_or(4);
                let fs = self.synth_fs.unwrap_or(160);
                let seconds = self.synth_seconds.unwrap_or(40.0);
                let seed = self.synth_seed.unwrap_or(0);
                let recs = synth_generate(subjects, channels, fs, seconds, seed)?;
                let source = json!({
                    "synth": { "subjects": subjects, "channels": channels, "fs": fs, "seconds": seconds, "seed": seed }
                });
                Ok((recs, source))
            }
            (Some(_), Some(_)) => bail!("--manifest and --synth-subjects are mutually exclusive"),
            (None, None) => bail!("no data source: pass --manifest or --synth-subjects"),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SelectArg {
    Validation,
    Test,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PartitionArg {
    Train,
    Validation,
    Test,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Architecture preset: dataset-1 or dataset-2. Input geometry always
    /// follows the data.
    #[arg(long, default_value = "dataset-2", conflicts_with = "model_config")]
    preset: String,
    /// TOML model configuration used instead of a preset.
    #[arg(long, value_name = "FILE")]
    model_config: Option<PathBuf>,
    /// Seed for splitting, initialization and batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training epochs.
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// NAdam learning rate (default: the preset's).
    #[arg(long)]
    lr: Option<f64>,
    /// Window length in seconds.
    #[arg(long, default_value_t = 8.0)]
    window_seconds: f64,
    /// Fractional overlap of consecutive windows.
    #[arg(long, default_value_t = 0.9)]
    overlap: f64,
    /// Share of subjects used for training (the rest is the test set).
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    /// Share of training subjects held out for checkpoint selection; 0
    /// disables the validation partition.
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    /// Keep all training windows instead of undersampling the majority class.
    #[arg(long)]
    no_undersample: bool,
    /// Drop the residual addition in every block.
    #[arg(long)]
    no_skip: bool,
    /// Replace the concatenation in every block by a full-width quanvolution.
    #[arg(long)]
    no_aggregation: bool,
    /// Disable both channel shuffles in every block.
    #[arg(long)]
    no_shuffle: bool,
    /// Partition whose metrics are logged and used to pick the best epoch.
    #[arg(long, value_enum, default_value = "validation")]
    select: SelectArg,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Partition recorded in the checkpoint to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    partition: PartitionArg,
    /// Output directory for eval.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct UncertaintyArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPSILONS)]
    eps: Vec<f64>,
    /// Perturbed copies per window.
    #[arg(long, default_value_t = DEFAULT_COPIES)]
    copies: usize,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Partition recorded in the checkpoint to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    partition: PartitionArg,
    /// Output directory (default: the checkpoint's directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    /// Checkpoint to explain.
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Stage to export: embedding, block_<n> or projection.
    #[arg(long, default_value = "block_4")]
    stage: String,
    /// Partition recorded in the checkpoint to export.
    #[arg(long, value_enum, default_value = "test")]
    partition: PartitionArg,
    /// STFT window length in samples.
    #[arg(long, default_value_t = DEFAULT_STFT_WINDOW)]
    stft_window: usize,
    /// STFT hop in samples.
    #[arg(long, default_value_t = DEFAULT_STFT_HOP)]
    stft_hop: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    /// Seed of the random cases.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    let args: Vec<String> = std::env::args().collect();
    let cli = config::parse_with_config::<Cli>(&args, |cli: &Cli| cli.config.clone())?;
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Uncertainty(a) => uncertainty_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Selfcheck(a) => selfcheck_cmd(a),
    }
}

fn synth_data(a: SynthDataArgs) -> Result<ExitCode> {
    let recs = synth_generate(a.subjects, a.channels, a.fs, a.seconds, a.seed)?;
    Outputs::run(&a.out, |out| {
        write_dataset(&recs, out.dir())?;
        out.finish(json!({
            "command": "synth-data",
            "subjects_per_class": a.subjects,
            "channels": a.channels,
            "fs": a.fs,
            "seconds": a.seconds,
            "seed": a.seed,
        }))
    })?;
    Ok(ExitCode::SUCCESS)
}

fn model_config(a: &TrainArgs) -> Result<ModelConfig> {
    match &a.model_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing model config {}", path.display()))
        }
        None => Ok(ModelConfig::preset(a.preset.parse::<Preset>()?)),
    }
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let (recs, source) = a.data.load()?;
    let pipeline = PipelineConfig {
        window_s: a.window_seconds,
        overlap: a.overlap,
        train_fraction: a.train_fraction,
        validation_fraction: a.validation_fraction,
        undersample: !a.no_undersample,
        seed: a.seed,
    };
    let data = prepare(&recs, &pipeline)?;
    let channels = data.train.windows[0].data.rows();
    let config = model_config(&a)?
        .with_input(channels, data.train.window_len)
        .with_toggles(BlockToggles {
            use_skip: !a.no_skip,
            use_aggregation: !a.no_aggregation,
            use_shuffle: !a.no_shuffle,
        });
    let learning_rate = a.lr.unwrap_or(config.learning_rate);
    let model = build_model(config, a.seed)?;
    let selection = match a.select {
        SelectArg::Validation => Selection::Validation,
        SelectArg::Test => Selection::Test,
    };
    let eval_set: Option<&[Window]> = match selection {
        Selection::Validation => {
            if data.validation.is_none() {
                log::warn!("no validation partition; best epoch is not tracked");
            }
            data.validation.as_ref().map(|d| d.windows.as_slice())
        }
        Selection::Test => Some(data.test.windows.as_slice()),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate,
        seed: a.seed,
    };
    let mut template = Checkpoint::new(model.clone(), 0);
    template.meta.pipeline = Some(pipeline.clone());
    template.meta.validation_subjects = data.validation_subjects.clone();
    template.meta.test_subjects = data.test_subjects.clone();
    template.norm = Some(data.train.stats.clone());

    Outputs::run(&a.out, |out| {
        let mut writer = RunWriter::create(out.dir(), template)?;
        let outcome = train(model, &data.train.windows, eval_set, &cfg, |epoch, m, metrics| {
            if let Some(mt) = metrics {
                log::info!("epoch {epoch}: loss {:.6}", mt.train_loss);
            }
            writer.record(epoch, m, metrics)
        })?;
        out.finish(json!({
            "command": "train",
            "data": source,
            "model": outcome.model.config(),
            "pipeline": pipeline,
            "train": { "epochs": cfg.epochs, "batch_size": cfg.batch_size, "learning_rate": cfg.learning_rate, "seed": cfg.seed },
            "selection": format!("{selection:?}").to_lowercase(),
            "best_epoch": outcome.best_epoch,
            "subjects": {
                "train": data.train_subjects,
                "validation": data.validation_subjects,
                "test": data.test_subjects,
            },
        }))
    })?;
    Ok(ExitCode::SUCCESS)
}

/// Normalized windows of one partition recorded in a checkpoint.
fn partition_windows(ck: &Checkpoint, recs: &[SubjectRecording], partition: PartitionArg) -> Result<Vec<Window>> {
    let pipeline = ck
        .meta
        .pipeline
        .as_ref()
        .context("checkpoint has no pipeline settings; it was not written by `train`")?;
    let ids: Vec<String> = match partition {
        PartitionArg::Test => ck.meta.test_subjects.clone(),
        PartitionArg::Validation => ck.meta.validation_subjects.clone(),
        PartitionArg::Train => {
            let held: BTreeSet<&String> = ck.meta.test_subjects.iter().chain(&ck.meta.validation_subjects).collect();
            recs.iter().map(|r| &r.subject_id).filter(|id| !held.contains(id)).cloned().collect()
        }
    };
    if ids.is_empty() {
        bail!("the checkpoint records no {partition:?} subjects");
    }
    let windows = window_subjects(recs, &ids, pipeline.window_s, pipeline.overlap)?;
    let stats = ck.norm.as_ref().context("checkpoint has no normalization statistics")?;
    Ok(zscore_apply(&windows, stats)?)
}

fn eval_cmd(a: EvalArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let (recs, source) = a.data.load()?;
    let windows = partition_windows(&ck, &recs, a.partition)?;
    let probs = predict(&ck.model, &windows)?;
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let s = summarize(&probs, &labels)?;
    Outputs::run(&a.out, |out| {
        let report = json!({
            "checkpoint": a.ckpt,
            "epoch": ck.meta.epoch,
            "partition": format!("{:?}", a.partition).to_lowercase(),
            "windows": windows.len(),
            "accuracy": s.accuracy,
            "mcc": s.mcc,
            "auc": s.auc,
            "confusion": { "tp": s.counts.tp, "tn": s.counts.tn, "fp": s.counts.fp, "fn": s.counts.fn_ },
        });
        out.write_json("eval.json", &report)?;
        println!("{}", serde_json::to_string(&report)?);
        out.finish(json!({ "command": "eval", "data": source, "checkpoint": a.ckpt }))
    })?;
    Ok(ExitCode::SUCCESS)
}

fn uncertainty_cmd(a: UncertaintyArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let (recs, source) = a.data.load()?;
    let windows = partition_windows(&ck, &recs, a.partition)?;
    let report = uncertainty_report(&ck.model, &windows, &a.eps, a.copies, a.seed)?;
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a.ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    Outputs::run(&dir, |out| {
        write_uncertainty_csv(&out.path("uncertainty.csv"), &report)?;
        out.finish_named(
            "uncertainty_run.json",
            json!({
                "command": "uncertainty",
                "data": source,
                "checkpoint": a.ckpt,
                "epsilons": a.eps,
                "copies": a.copies,
                "seed": a.seed,
            }),
            &["uncertainty.csv"],
        )
    })?;
    Ok(ExitCode::SUCCESS)
}

fn explain_cmd(a: ExplainArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let stage: Stage = a.stage.parse()?;
    stage.validate(&ck.model)?;
    let (recs, source) = a.data.load()?;
    let windows = partition_windows(&ck, &recs, a.partition)?;
    let activations = export_activations(&ck.model, &windows, stage)?;
    let embeddings = export_embeddings(&ck.model, &windows)?;
    let ids: Vec<String> = windows.iter().map(|w| w.subject_id.clone()).collect();
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    Outputs::run(&a.out, |out| {
        write_activation_summary_csv(&out.path("activation_summary.csv"), &activations)?;
        write_activations_csv(&out.path("activations.csv"), &activations, &ids, &labels)?;
        write_spectrogram_csv(&out.path("spectrogram.csv"), &activations, a.stft_window, a.stft_hop)?;
        write_embeddings_csv(&out.path("embeddings.csv"), &embeddings)?;
        out.finish(json!({
            "command": "explain",
            "data": source,
            "checkpoint": a.ckpt,
            "stage": stage.to_string(),
            "selected_channel": activations.selected_channel,
            "stft_window": a.stft_window,
            "stft_hop": a.stft_hop,
        }))
    })?;
    Ok(ExitCode::SUCCESS)
}

fn selfcheck_cmd(a: SelfcheckArgs) -> Result<ExitCode> {
    let mut ok = true;
    for c in quanvnext::selfcheck::run_all(a.seed)? {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!("{status} {} ({} cases, worst {:.3e}, tolerance {:.0e})", c.name, c.cases, c.worst, c.tolerance);
        ok &= c.passed();
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
