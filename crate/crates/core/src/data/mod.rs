//! Recordings, preprocessing and the synthetic generator.

mod pipeline;
mod recording;
mod synth;

pub use pipeline::{
    class_counts, prepare, subject_split, undersample, window_geometry, window_signal, window_starts,
    window_subjects, zscore_apply, zscore_fit, zscore_tensor, PipelineConfig, PreparedData, Split,
    Window, WindowedDataset, ZScoreStats, STD_FLOOR,
};
pub use recording::{
    decode_signal, encode_signal, load_manifest, load_subject, resolve_manifest_path, write_dataset,
    write_subject, Manifest, ManifestEntry, SubjectRecording, MANIFEST_FILE,
};
pub use synth::{synth_generate, HC_PREFIX, MDD_PREFIX};
