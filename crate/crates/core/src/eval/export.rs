//! CSV writers. Floats carry 9 significant digits; absent values are empty
//! fields.
//!
//! | file | columns |
//! |------|---------|
//! | uncertainty | `epsilon,n_samples,accuracy,ci_low,ci_high,mean_uncertainty_correct,mean_uncertainty_incorrect,ece` |
//! | activation summary | `label,count,channel,position,mean,std,selected` |
//! | activations | `sample,subject_id,label,channel,position,value` (selected channel only) |
//! | spectrogram | `label,channel,frame,bin,magnitude` |
//! | embeddings | `subject_id,label,f0..f{m-1},pc1,pc2` |

use std::io::Write;
use std::path::Path;

use super::explain::{stft_spectrogram, ActivationExport, EmbeddingExport};
use super::uncertainty::UncertaintyRecord;
use crate::error::{Error, Result};

/// 9 significant digits in scientific notation.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_rows<I>(path: &Path, header: Vec<String>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn write_uncertainty_csv(path: &Path, records: &[UncertaintyRecord]) -> Result<()> {
    write_rows(
        path,
        strings(&[
            "epsilon",
            "n_samples",
            "accuracy",
            "ci_low",
            "ci_high",
            "mean_uncertainty_correct",
            "mean_uncertainty_incorrect",
            "ece",
        ]),
        records.iter().map(|r| {
            vec![
                fmt_float(r.epsilon),
                r.n_samples.to_string(),
                fmt_float(r.accuracy),
                fmt_float(r.ci_low),
                fmt_float(r.ci_high),
                fmt_opt(r.mean_uncertainty_correct),
                fmt_opt(r.mean_uncertainty_incorrect),
                fmt_float(r.ece),
            ]
        }),
    )
}

pub fn write_activation_summary_csv(path: &Path, export: &ActivationExport) -> Result<()> {
    let mut rows = Vec::new();
    for (label, stats) in export.per_class.iter().enumerate() {
        let Some(s) = stats else { continue };
        for c in 0..s.mean.rows() {
            for t in 0..s.mean.cols() {
                rows.push(vec![
                    label.to_string(),
                    s.count.to_string(),
                    c.to_string(),
                    t.to_string(),
                    fmt_float(s.mean.get(c, t)),
                    fmt_float(s.std.get(c, t)),
                    u8::from(c == export.selected_channel).to_string(),
                ]);
            }
        }
    }
    write_rows(
        path,
        strings(&["label", "count", "channel", "position", "mean", "std", "selected"]),
        rows,
    )
}

pub fn write_activations_csv(
    path: &Path,
    export: &ActivationExport,
    subject_ids: &[String],
    labels: &[usize],
) -> Result<()> {
    let c = export.selected_channel;
    let mut rows = Vec::new();
    for (i, a) in export.activations.iter().enumerate() {
        for (t, v) in a.row(c).iter().enumerate() {
            rows.push(vec![
                i.to_string(),
                subject_ids[i].clone(),
                labels[i].to_string(),
                c.to_string(),
                t.to_string(),
                fmt_float(*v),
            ]);
        }
    }
    write_rows(
        path,
        strings(&["sample", "subject_id", "label", "channel", "position", "value"]),
        rows,
    )
}

/// Spectrogram of each class's mean activation on the selected channel. The
/// STFT window shrinks to the activation length when the stage is shorter
/// than `window`.
pub fn write_spectrogram_csv(path: &Path, export: &ActivationExport, window: usize, hop: usize) -> Result<()> {
    let c = export.selected_channel;
    let mut rows = Vec::new();
    for (label, stats) in export.per_class.iter().enumerate() {
        let Some(s) = stats else { continue };
        let signal = s.mean.row(c);
        let spec = stft_spectrogram(signal, window.min(signal.len()), hop)?;
        for f in 0..spec.rows() {
            for b in 0..spec.cols() {
                rows.push(vec![
                    label.to_string(),
                    c.to_string(),
                    f.to_string(),
                    b.to_string(),
                    fmt_float(spec.get(f, b)),
                ]);
            }
        }
    }
    write_rows(path, strings(&["label", "channel", "frame", "bin", "magnitude"]), rows)
}

pub fn write_embeddings_csv(path: &Path, export: &EmbeddingExport) -> Result<()> {
    let m = export.features.first().map_or(0, Vec::len);
    let mut header = strings(&["subject_id", "label"]);
    header.extend((0..m).map(|j| format!("f{j}")));
    header.extend(strings(&["pc1", "pc2"]));
    let rows = (0..export.features.len()).map(|i| {
        let mut row = vec![export.subject_ids[i].clone(), export.labels[i].to_string()];
        row.extend(export.features[i].iter().map(|&v| fmt_float(v)));
        row.extend(export.pca[i].iter().map(|&v| fmt_float(v)));
        row
    });
    write_rows(path, header, rows)
}

/// Appends one line to an open CSV stream; used for incremental logs.
pub fn append_line(out: &mut impl Write, path: &Path, fields: &[String]) -> Result<()> {
    writeln!(out, "{}", fields.join(",")).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_float(0.123456789123), "1.23456789e-1");
        assert_eq!(fmt_float(-2.0), "-2.00000000e0");
        assert_eq!(fmt_float(0.0), "0.00000000e0");
    }

    #[test]
    fn uncertainty_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        let r = UncertaintyRecord {
            epsilon: 0.1,
            n_samples: 4,
            accuracy: 1.0,
            ci_low: 0.5,
            ci_high: 1.0,
            mean_uncertainty_correct: Some(0.01),
            mean_uncertainty_incorrect: None,
            ece: 0.02,
        };
        write_uncertainty_csv(&path, &[r.clone(), r.clone(), r]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",1.00000000e-2,,2.00000000e-2"));
    }
}
