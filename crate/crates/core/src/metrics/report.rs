use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::auc::{auc_macro_ovr, binary_neoplastic_metrics, AucReport, BinaryMetrics};
use super::confusion::{classification_metrics, normalize_confusion, ClassificationMetrics, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::phantom::KudoClass;

/// Evaluation of one model on one sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fold: Option<usize>,
    pub samples: usize,
    pub confusion: ConfusionMatrix,
    /// Absent when some true class has no samples.
    pub normalized_confusion: Option<Vec<Vec<f64>>>,
    pub metrics: ClassificationMetrics,
    pub auc: AucReport,
    /// Absent unless both neoplastic groups are present.
    pub binary: Option<BinaryMetrics>,
    /// Best validation accuracy of the run that produced the model.
    pub validation_accuracy: Option<f64>,
    pub parameters: Option<usize>,
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

impl MetricsReport {
    /// Scores are per-sample class probabilities; the prediction is the
    /// first maximal column.
    pub fn from_scores(scores: &[Vec<f64>], labels: &[usize], fold: Option<usize>) -> Result<Self> {
        let auc = auc_macro_ovr(scores, labels)?;
        let classes = scores.first().map_or(0, Vec::len);
        let predicted: Vec<usize> = scores.iter().map(|r| argmax(r)).collect();
        let confusion = ConfusionMatrix::from_predictions(&predicted, labels, classes)?;
        let metrics = classification_metrics(&confusion)?;
        let binary = if classes == KudoClass::ALL.len() {
            binary_neoplastic_metrics(scores, labels).ok()
        } else {
            None
        };
        Ok(Self {
            fold,
            samples: labels.len(),
            normalized_confusion: normalize_confusion(&confusion).ok(),
            confusion,
            metrics,
            auc,
            binary,
            validation_accuracy: None,
            parameters: None,
        })
    }

    /// Named scalar values used for aggregation.
    pub fn scalars(&self) -> BTreeMap<&'static str, f64> {
        let mut out = BTreeMap::new();
        if let Some(v) = self.validation_accuracy {
            out.insert("validation_accuracy", v);
        }
        out.insert("test_accuracy", self.metrics.accuracy);
        out.insert("sensitivity", self.metrics.sensitivity);
        out.insert("precision", self.metrics.precision);
        out.insert("specificity", self.metrics.specificity);
        out.insert("f1", self.metrics.f1);
        if let Some(v) = self.auc.macro_auc {
            out.insert("auc", v);
        }
        if let Some(b) = &self.binary {
            out.insert("neoplastic_sensitivity", b.sensitivity);
            out.insert("neoplastic_specificity", b.specificity);
            out.insert("neoplastic_auc", b.auc);
        }
        if let Some(p) = self.parameters {
            out.insert("parameters", p as f64);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub folds: usize,
}

/// Mean and population std of every scalar present in all reports.
pub fn summarize(reports: &[MetricsReport]) -> BTreeMap<String, Summary> {
    let scalars: Vec<_> = reports.iter().map(MetricsReport::scalars).collect();
    let mut out = BTreeMap::new();
    let Some(first) = scalars.first() else {
        return out;
    };
    for key in first.keys() {
        let values: Vec<f64> = scalars.iter().filter_map(|s| s.get(key).copied()).collect();
        if values.len() != scalars.len() {
            continue;
        }
        let n = values.len() as f64;
        let (mean, var) = if values.iter().all(|&v| v == values[0]) {
            (values[0], 0.0)
        } else {
            let mean = values.iter().sum::<f64>() / n;
            (mean, values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
        };
        out.insert(
            key.to_string(),
            Summary {
                mean,
                std: var.sqrt(),
                folds: values.len(),
            },
        );
    }
    out
}

/// Table rows: label, scalar key, and display scale.
pub const TABLE_ROWS: [(&str, &str, f64); 8] = [
    ("Validation Acc. (%)", "validation_accuracy", 100.0),
    ("Test Acc. (%)", "test_accuracy", 100.0),
    ("Sensitivity (%)", "sensitivity", 100.0),
    ("Precision (%)", "precision", 100.0),
    ("Specificity (%)", "specificity", 100.0),
    ("F1-score (%)", "f1", 100.0),
    ("AUC", "auc", 1.0),
    ("Parameters (mil)", "parameters", 1e-6),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub table: PathBuf,
    pub confusion: PathBuf,
}

pub fn format_table(summary: &BTreeMap<String, Summary>) -> String {
    let mut s = format!("{:<22}{:>12}{:>12}\n", "Metrics", "Mean", "Std");
    for (label, key, scale) in TABLE_ROWS {
        match summary.get(key) {
            Some(v) if key == "auc" => {
                let _ = writeln!(s, "{label:<22}{:>12.4}{:>12.4}", v.mean * scale, v.std * scale);
            }
            Some(v) => {
                let _ = writeln!(s, "{label:<22}{:>12.2}{:>12.2}", v.mean * scale, v.std * scale);
            }
            None => {
                let _ = writeln!(s, "{label:<22}{:>12}{:>12}", "-", "-");
            }
        }
    }
    s
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `report.json` (per-fold reports and mean ± std), `report.txt`
/// (the metric table) and `confusion.csv` into `dir`.
pub fn emit_report(reports: &[MetricsReport], dir: &Path) -> Result<ReportFiles> {
    if reports.is_empty() {
        return Err(Error::Empty("no fold reports".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = summarize(reports);
    let files = ReportFiles {
        json: dir.join("report.json"),
        table: dir.join("report.txt"),
        confusion: dir.join("confusion.csv"),
    };
    let json = serde_json::json!({ "folds": reports, "summary": summary });
    write(&files.json, serde_json::to_string_pretty(&json)?.as_bytes())?;
    write(&files.table, format_table(&summary).as_bytes())?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    let classes = reports[0].confusion.classes;
    let names: Vec<String> = (0..classes)
        .map(|c| KudoClass::from_index(c).map_or(c.to_string(), |k| k.letter().to_string()))
        .collect();
    let mut header = vec!["fold".to_string(), "kind".into(), "predicted".into()];
    header.extend(names.iter().cloned());
    csv.write_record(&header)?;
    for (i, r) in reports.iter().enumerate() {
        let fold = r.fold.unwrap_or(i).to_string();
        for p in 0..classes {
            let mut rec = vec![fold.clone(), "count".into(), names[p].clone()];
            rec.extend((0..classes).map(|t| r.confusion.get(p, t).to_string()));
            csv.write_record(&rec)?;
        }
        if let Some(n) = &r.normalized_confusion {
            for p in 0..classes {
                let mut rec = vec![fold.clone(), "normalized".into(), names[p].clone()];
                rec.extend(n[p].iter().map(|v| v.to_string()));
                csv.write_record(&rec)?;
            }
        }
    }
    let bytes = csv.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write(&files.confusion, &bytes)?;
    Ok(files)
}
