use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `(predicted, true)`, stored row-major by predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::shape(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (&p, &t) in predicted.iter().zip(truth) {
            for label in [p, t] {
                if label >= classes {
                    return Err(Error::Label { label, classes });
                }
            }
            cm.counts[p * classes + t] += 1;
        }
        Ok(cm)
    }

    pub fn get(&self, predicted: usize, truth: usize) -> u64 {
        self.counts[predicted * self.classes + truth]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Number of samples whose true class is `truth`.
    pub fn column_total(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(p, truth)).sum()
    }

    /// Number of samples predicted as `predicted`.
    pub fn row_total(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(predicted, t)).sum()
    }
}

/// Divides each column by its true-class total, so the diagonal holds the
/// per-class recall. Returned row-major as `[predicted][true]`.
pub fn normalize_confusion(cm: &ConfusionMatrix) -> Result<Vec<Vec<f64>>> {
    let totals: Vec<u64> = (0..cm.classes).map(|j| cm.column_total(j)).collect();
    if let Some(j) = totals.iter().position(|&t| t == 0) {
        return Err(Error::UndefinedColumn(j));
    }
    Ok((0..cm.classes)
        .map(|i| {
            (0..cm.classes)
                .map(|j| cm.get(i, j) as f64 / totals[j] as f64)
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    /// Nothing was predicted as this class; precision is reported as 0.
    pub precision_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest per-class metrics and their unweighted (macro) means.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("no samples to score".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.classes)
        .map(|c| {
            let tp = cm.get(c, c);
            let fn_ = cm.column_total(c) - tp;
            let fp = cm.row_total(c) - tp;
            let tn = total - tp - fn_ - fp;
            let sensitivity = ratio(tp, tp + fn_);
            let precision = ratio(tp, tp + fp);
            let f1 = if precision + sensitivity > 0.0 {
                2.0 * precision * sensitivity / (precision + sensitivity)
            } else {
                0.0
            };
            ClassMetrics {
                sensitivity,
                specificity: ratio(tn, tn + fp),
                precision,
                f1,
                precision_undefined: tp + fp == 0,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / cm.classes as f64;
    Ok(ClassificationMetrics {
        accuracy: cm.trace() as f64 / total as f64,
        sensitivity: mean(|m| m.sensitivity),
        specificity: mean(|m| m.specificity),
        precision: mean(|m| m.precision),
        f1: mean(|m| m.f1),
        per_class,
    })
}
