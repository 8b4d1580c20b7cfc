//! Accuracy reports and their JSON/CSV emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Gesture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub subject: String,
    pub n_test: usize,
    pub accuracy: f64,
    /// Counts `[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    #[serde(default)]
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    pub stream: u32,
    pub delay_bin: u32,
    pub n_vectors: usize,
    pub median_snr_db: f64,
    pub gated_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub samples_per_class: usize,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub draws: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub classes: Vec<Gesture>,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    /// Average of per-fold row-normalised confusion matrices, percent.
    pub confusion_pct: Vec<Vec<f64>>,
    pub snr: Vec<SnrSummary>,
    #[serde(default)]
    pub calibration: Vec<CalibrationPoint>,
    /// Wall-clock seconds; kept out of the JSON so reruns compare byte for byte.
    #[serde(skip)]
    pub runtime_s: f64,
}

/// Mean and sample standard deviation.
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Percent row normalisation; empty rows stay zero.
pub fn row_normalize(counts: &[Vec<usize>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if total == 0 {
                        0.0
                    } else {
                        100.0 * c as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect()
}

impl Report {
    /// Aggregates folds. Each confusion row is averaged over the folds in
    /// which that class occurs.
    pub fn from_folds(kind: &str, classes: Vec<Gesture>, folds: Vec<FoldResult>, snr: Vec<SnrSummary>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::invalid("report needs at least one fold"));
        }
        if let Some(f) = folds.iter().find(|f| f.n_test == 0) {
            return Err(Error::invalid(format!("fold {:?} has no test samples", f.subject)));
        }
        let c = classes.len();
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let (mean_accuracy, sd_accuracy) = mean_sd(&acc);
        let mut sum = vec![vec![0.0; c]; c];
        let mut used = vec![0usize; c];
        for f in &folds {
            for (i, row) in row_normalize(&f.confusion).iter().enumerate() {
                if f.confusion[i].iter().sum::<usize>() == 0 {
                    continue;
                }
                used[i] += 1;
                for (s, v) in sum[i].iter_mut().zip(row) {
                    *s += v;
                }
            }
        }
        let confusion_pct = sum
            .into_iter()
            .zip(&used)
            .map(|(row, &u)| {
                row.into_iter()
                    .map(|v| if u == 0 { 0.0 } else { v / u as f64 })
                    .collect()
            })
            .collect();
        Ok(Report {
            kind: kind.to_string(),
            classes,
            folds,
            mean_accuracy,
            sd_accuracy,
            confusion_pct,
            snr,
            calibration: vec![],
            runtime_s: 0.0,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(format!("report: {e}")))
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion_pct) {
            let _ = write!(s, "{c}");
            for v in row {
                let _ = write!(s, ",{v:.4}");
            }
            s.push('\n');
        }
        s
    }

    pub fn folds_csv(&self) -> String {
        let mut s = String::from("subject,n_test,accuracy\n");
        for f in &self.folds {
            let _ = writeln!(s, "{},{},{:.6}", f.subject, f.n_test, f.accuracy);
        }
        s
    }

    pub fn snr_csv(&self) -> String {
        let mut s = String::from("stream,delay_bin,n_vectors,median_snr_db,gated_fraction\n");
        for r in &self.snr {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4}",
                r.stream, r.delay_bin, r.n_vectors, r.median_snr_db, r.gated_fraction
            );
        }
        s
    }

    pub fn calibration_csv(&self) -> String {
        let mut s = String::from("samples_per_class,mean_accuracy,sd_accuracy\n");
        for p in &self.calibration {
            let _ = writeln!(s, "{},{:.6},{:.6}", p.samples_per_class, p.mean_accuracy, p.sd_accuracy);
        }
        s
    }

    /// Writes the JSON report to `path` and CSV tables next to it, returning
    /// every written path.
    pub fn emit(&self, path: &Path) -> Result<Vec<PathBuf>> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("report")
            .to_string();
        let sibling = |suffix: &str| path.with_file_name(format!("{stem}_{suffix}.csv"));
        let mut written = vec![path.to_path_buf()];
        fs::write(path, self.to_json()?)?;
        let mut tables = vec![
            (sibling("confusion"), self.confusion_csv()),
            (sibling("folds"), self.folds_csv()),
            (sibling("snr"), self.snr_csv()),
        ];
        if !self.calibration.is_empty() {
            tables.push((sibling("calibration"), self.calibration_csv()));
        }
        for (p, text) in tables {
            fs::write(&p, text)?;
            written.push(p);
        }
        Ok(written)
    }
}
