use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Share of each fold's training portion held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
}

fn by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups
}

/// Splits `n` items into `k` chunks whose sizes differ by at most one,
/// larger chunks first.
fn chunk_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let b = (start, start + len);
            start += len;
            b
        })
        .collect()
}

pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("stratified k-fold needs k >= 2, got {k}")));
    }
    if labels.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    let mut groups = by_class(labels);
    for (class, g) in groups.iter_mut().enumerate() {
        if g.is_empty() {
            continue;
        }
        if g.len() < k {
            return Err(Error::Stratification { class, count: g.len(), k });
        }
        g.shuffle(&mut seed::rng(seed, &[class as u64]));
    }
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut test = Vec::new();
        let mut train = Vec::new();
        let mut val = Vec::new();
        for g in groups.iter().filter(|g| !g.is_empty()) {
            let bounds = chunk_bounds(g.len(), k);
            let (s, e) = bounds[f];
            test.extend_from_slice(&g[s..e]);
            let rest: Vec<usize> = g[..s].iter().chain(&g[e..]).copied().collect();
            let n_val = (rest.len() as f64 * VALIDATION_FRACTION).round() as usize;
            val.extend_from_slice(&rest[..n_val]);
            train.extend_from_slice(&rest[n_val..]);
        }
        test.sort_unstable();
        train.sort_unstable();
        val.sort_unstable();
        folds.push(Fold { train, val, test });
    }
    Ok(FoldPlan { k, folds })
}

/// The 80/20 train/test holdout: fold 0 of a stratified 5-fold plan, with
/// validation folded back into training. Returns (train, test).
pub fn holdout_split(labels: &[usize], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let fold = stratified_kfold(labels, 5, seed)?.folds.swap_remove(0);
    let mut train = fold.train;
    train.extend(fold.val);
    train.sort_unstable();
    Ok((train, fold.test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_differ_by_at_most_one() {
        assert_eq!(chunk_bounds(57, 5), vec![(0, 12), (12, 24), (24, 35), (35, 46), (46, 57)]);
        assert_eq!(chunk_bounds(3, 3), vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn rejects_small_classes_and_k_below_two() {
        let labels = [0, 0, 0, 1, 1];
        assert!(matches!(
            stratified_kfold(&labels, 3, 0),
            Err(Error::Stratification { class: 1, count: 2, k: 3 })
        ));
        assert!(matches!(stratified_kfold(&labels, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn five_of_each_class_gives_one_per_class_per_fold() {
        let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let plan = stratified_kfold(&labels, 5, 3).unwrap();
        for fold in &plan.folds {
            let mut classes: Vec<usize> = fold.test.iter().map(|&i| labels[i]).collect();
            classes.sort_unstable();
            assert_eq!(classes, vec![0, 1, 2, 3]);
        }
    }
}
