//! Metrics, the perturbation uncertainty harness and explainability exports.

pub mod explain;
pub mod export;
pub mod metrics;
pub mod uncertainty;

pub use explain::{
    export_activations, export_embeddings, group_stats, max_variance_channel, pca_2d, stft_spectrogram,
    ActivationExport, EmbeddingExport, GroupStats, Stage, DEFAULT_STFT_HOP, DEFAULT_STFT_WINDOW,
};
pub use metrics::{auc_roc, ece, mcc, summarize, wilson_interval, ConfusionCounts, Summary};
pub use uncertainty::{
    perturb_predict, uncertainty_report, Classifier, Perturbation, UncertaintyRecord, DEFAULT_COPIES, DEFAULT_EPSILONS,
};
