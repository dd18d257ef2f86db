use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::KudoClass;

/// Mann-Whitney estimate of P(score of a positive > score of a negative),
/// ties counted as one half via midranks. `None` without both groups.
pub fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// `None` for classes without both positives and negatives.
    pub per_class: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
    /// Mean over the classes that were not excluded.
    pub macro_auc: Option<f64>,
}

fn check_rows(scores: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    let classes = scores.first().map_or(0, Vec::len);
    for row in scores {
        if row.len() != classes {
            return Err(Error::shape("score rows differ in length"));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite score".into()));
        }
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    Ok(classes)
}

/// One-vs-rest AUC of each score column, and their macro mean.
pub fn auc_macro_ovr(scores: &[Vec<f64>], labels: &[usize]) -> Result<AucReport> {
    let classes = check_rows(scores, labels)?;
    let per_class: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let column: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            rank_auc(&column, &positive)
        })
        .collect();
    let kept: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(AucReport {
        excluded: (0..classes).filter(|&c| per_class[c].is_none()).collect(),
        macro_auc: (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64),
        per_class,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub auc: f64,
}

/// Neoplastic (O, G) versus non-neoplastic (A, R): the group score is the
/// summed probability of the two neoplastic classes, thresholded at 0.5.
pub fn binary_neoplastic_metrics(scores: &[Vec<f64>], labels: &[usize]) -> Result<BinaryMetrics> {
    let classes = check_rows(scores, labels)?;
    if classes != KudoClass::ALL.len() {
        return Err(Error::Config(format!("neoplastic grouping needs 4 classes, got {classes}")));
    }
    let group: Vec<f64> = scores
        .iter()
        .map(|r| KudoClass::ALL.iter().filter(|k| k.is_neoplastic()).map(|k| r[k.index()]).sum())
        .collect();
    let positive: Vec<bool> = labels.iter().map(|&l| KudoClass::ALL[l].is_neoplastic()).collect();
    let auc = rank_auc(&group, &positive)
        .ok_or_else(|| Error::Data("binary metrics need both neoplastic and non-neoplastic samples".into()))?;
    let (mut tp, mut pos, mut tn, mut neg) = (0u64, 0u64, 0u64, 0u64);
    for (&s, &p) in group.iter().zip(&positive) {
        let called = s >= 0.5;
        if p {
            pos += 1;
            tp += u64::from(called);
        } else {
            neg += 1;
            tn += u64::from(!called);
        }
    }
    Ok(BinaryMetrics {
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / neg as f64,
        auc,
    })
}
