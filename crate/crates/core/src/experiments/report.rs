//! Stable CSV and JSON report files. Floats use fixed decimals so reruns are
//! byte-identical.
//!
//! | file                   | columns                                                       |
//! |------------------------|---------------------------------------------------------------|
//! | `confusion_matrix.csv` | `true`, one column per predicted class, `support`             |
//! | `regression_table.csv` | `material,mean_weight_g,mae_g,mae_percent` + `overall`, `baseline` rows |
//! | `per_split.csv`        | `task,split,accuracy,mae,epochs,best_epoch,best_val_loss`     |
//! | `sweep.csv`            | `gain,accuracy,mae`                                           |
//! | `summary.json`         | [`Summary`]                                                   |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionMatrix, RegressionReport};
use super::noise::NoiseSweepResult;
use super::protocol::{ProtocolReport, SplitMetrics};
use super::ExperimentError;
use crate::synth::Material;

pub const CONFUSION_FILE: &str = "confusion_matrix.csv";
pub const REGRESSION_FILE: &str = "regression_table.csv";
pub const PER_SPLIT_FILE: &str = "per_split.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.decimals$}"))
}

pub fn confusion_csv(matrix: &ConfusionMatrix) -> String {
    let name = |i: usize| Material::from_label(i).map_or_else(|| i.to_string(), |m| m.name().to_string());
    let n = matrix.n_classes();
    let mut out = String::from("true");
    for p in 0..n {
        out.push(',');
        out.push_str(&name(p));
    }
    out.push_str(",support\n");
    for t in 0..n {
        out.push_str(&name(t));
        for p in 0..n {
            write!(out, ",{:.6}", matrix.rate(t, p)).expect("string write");
        }
        writeln!(out, ",{}", matrix.support[t]).expect("string write");
    }
    out
}

pub fn regression_csv(report: &RegressionReport) -> String {
    let mut out = String::from("material,mean_weight_g,mae_g,mae_percent\n");
    for m in &report.materials {
        writeln!(out, "{},{:.3},{:.4},{:.2}", m.material, m.mean_weight, m.mae, m.percent).expect("string write");
    }
    writeln!(out, "overall,,{:.4},{:.2}", report.overall_mae, report.overall_percent).expect("string write");
    writeln!(out, "baseline,,{:.4},", report.baseline_mae).expect("string write");
    out
}

pub fn per_split_csv(rows: &[SplitMetrics]) -> String {
    let mut out = String::from("task,split,accuracy,mae,epochs,best_epoch,best_val_loss\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.9}",
            r.task.name(),
            r.split,
            opt(r.accuracy, 6),
            opt(r.mae, 4),
            r.epochs,
            r.best_epoch,
            r.best_val_loss
        )
        .expect("string write");
    }
    out
}

pub fn sweep_csv(result: &NoiseSweepResult) -> String {
    let mut out = String::from("gain,accuracy,mae\n");
    for p in &result.points {
        writeln!(out, "{:.2},{},{}", p.gain, opt(p.accuracy, 6), opt(p.mae, 4)).expect("string write");
    }
    out
}

#[derive(Debug, Deserialize)]
struct SweepRow {
    gain: f64,
    accuracy: Option<f64>,
    mae: Option<f64>,
}

/// `(gain, accuracy, mae)` as read back from `sweep.csv`.
pub type SweepLine = (f64, Option<f64>, Option<f64>);

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepLine>, ExperimentError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize::<SweepRow>()
        .map(|r| {
            r.map(|r| (r.gain, r.accuracy, r.mae))
                .map_err(|e| ExperimentError::InvalidConfig(format!("sweep csv: {e}")))
        })
        .collect()
}

/// Whitespace-separated columns for gnuplot; missing values become `NaN`.
pub fn sweep_gnuplot(rows: &[SweepLine]) -> String {
    let mut out = String::from("# gain accuracy mae_g\n");
    let cell = |v: Option<f64>, d: usize| v.map_or("NaN".to_string(), |x| format!("{x:.d$}"));
    for (g, a, m) in rows {
        writeln!(out, "{g:.2} {} {}", cell(*a, 6), cell(*m, 4)).expect("string write");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_samples: usize,
    pub n_splits: usize,
    pub accuracy: Option<f64>,
    pub accuracy_per_split: Vec<f64>,
    pub most_confused: Option<(String, String, f64)>,
    pub mae_g: Option<f64>,
    pub mae_per_split: Vec<f64>,
    pub baseline_mae_g: Option<f64>,
}

impl Summary {
    pub fn of(report: &ProtocolReport) -> Self {
        let c = report.classification.as_ref();
        let r = report.regression.as_ref();
        let name = |i: usize| Material::from_label(i).map_or_else(|| i.to_string(), |m| m.name().to_string());
        Self {
            n_samples: report.n_samples,
            n_splits: report.n_splits,
            accuracy: c.map(|c| c.accuracy),
            accuracy_per_split: c.map_or(Vec::new(), |c| c.per_split.iter().filter_map(|s| s.accuracy).collect()),
            most_confused: c.and_then(|c| c.matrix.most_confused_pair()).map(|(a, b, mass)| (name(a), name(b), mass)),
            mae_g: r.map(|r| r.report.overall_mae),
            mae_per_split: r.map_or(Vec::new(), |r| r.per_split.iter().filter_map(|s| s.mae).collect()),
            baseline_mae_g: r.map(|r| r.report.baseline_mae),
        }
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, ExperimentError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })?;
    Ok(path)
}

/// Writes every report that applies to `report` into `dir`.
pub fn write_protocol_reports(dir: impl AsRef<Path>, report: &ProtocolReport) -> Result<Vec<PathBuf>, ExperimentError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    let mut splits = Vec::new();
    if let Some(c) = &report.classification {
        written.push(write(dir, CONFUSION_FILE, &confusion_csv(&c.matrix))?);
        splits.extend(c.per_split.iter().cloned());
    }
    if let Some(r) = &report.regression {
        written.push(write(dir, REGRESSION_FILE, &regression_csv(&r.report))?);
        splits.extend(r.per_split.iter().cloned());
    }
    written.push(write(dir, PER_SPLIT_FILE, &per_split_csv(&splits))?);
    let summary = serde_json::to_string_pretty(&Summary::of(report)).expect("summary serializes");
    written.push(write(dir, SUMMARY_FILE, &(summary + "\n"))?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{NoiseTarget, SweepPoint};

    #[test]
    fn confusion_layout() {
        let mut rates = vec![vec![0.0; 10]; 10];
        for (i, row) in rates.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let csv = confusion_csv(&ConfusionMatrix { rates, support: vec![8; 10] });
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "true,coins,glass,gravel,herbs,nuts,plastic,rice,sand,stone,sugar,support");
        assert!(lines[1].starts_with("coins,1.000000,0.000000"));
        assert!(lines[1].ends_with(",8"));
        assert_eq!(lines.len(), 11);
    }

    #[test]
    fn regression_layout() {
        let r = RegressionReport::from_rows(&[("glass".into(), 12.6, 3.16)], 3.16, 9.4467);
        assert_eq!(
            regression_csv(&r),
            "material,mean_weight_g,mae_g,mae_percent\nglass,12.600,3.1600,25.08\noverall,,3.1600,25.08\nbaseline,,9.4467,\n"
        );
    }

    #[test]
    fn sweep_round_trip() {
        let empty = ProtocolReport { n_samples: 0, n_splits: 0, classification: None, regression: None };
        let result = NoiseSweepResult {
            target: NoiseTarget::Both,
            points: vec![
                SweepPoint { gain: 0.0, accuracy: Some(0.95), mae: Some(3.2), report: empty.clone() },
                SweepPoint { gain: 0.05, accuracy: Some(0.9), mae: None, report: empty },
            ],
        };
        let csv = sweep_csv(&result);
        assert_eq!(csv, "gain,accuracy,mae\n0.00,0.950000,3.2000\n0.05,0.900000,\n");
        let rows = sweep_from_csv(&csv).unwrap();
        assert_eq!(rows, vec![(0.0, Some(0.95), Some(3.2)), (0.05, Some(0.9), None)]);
        assert_eq!(sweep_gnuplot(&rows), "# gain accuracy mae_g\n0.00 0.950000 3.2000\n0.05 0.900000 NaN\n");
    }
}
