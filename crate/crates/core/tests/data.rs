use std::collections::BTreeSet;

use pitnet::data::{batch_iter, holdout_split, stratified_kfold, AugmentConfig, Dataset, Manifest};
use pitnet::phantom::{generate_dataset, GenerateConfig};

fn paper_labels() -> Vec<usize> {
    [57, 57, 55, 60]
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
        .collect()
}

fn class_count(indices: &[usize], labels: &[usize], class: usize) -> usize {
    indices.iter().filter(|&&i| labels[i] == class).count()
}

#[test]
fn paper_composition_five_folds() {
    let labels = paper_labels();
    let plan = stratified_kfold(&labels, 5, 42).unwrap();
    assert_eq!(plan.folds.len(), 5);
    let mut seen = BTreeSet::new();
    for fold in &plan.folds {
        assert!((45..=48).contains(&fold.test.len()), "test size {}", fold.test.len());
        for class in 0..4 {
            let n = class_count(&fold.test, &labels, class);
            assert!(n == 11 || n == 12, "class {class} has {n} test samples");
        }
        let all: BTreeSet<usize> = fold.train.iter().chain(&fold.val).chain(&fold.test).copied().collect();
        assert_eq!(all.len(), labels.len(), "parts overlap or miss samples");
        assert!(fold.test.iter().all(|i| seen.insert(*i)), "test sets overlap");
    }
    assert_eq!(seen.len(), labels.len());
}

#[test]
fn validation_is_a_fifth_of_each_class_remainder() {
    let labels = paper_labels();
    let plan = stratified_kfold(&labels, 5, 1).unwrap();
    for fold in &plan.folds {
        for class in 0..4 {
            let rest = class_count(&fold.train, &labels, class) + class_count(&fold.val, &labels, class);
            let expected = (rest as f64 * 0.2).round() as usize;
            assert_eq!(class_count(&fold.val, &labels, class), expected);
        }
    }
}

#[test]
fn paper_holdout_is_182_47() {
    let labels = paper_labels();
    let (train, test) = holdout_split(&labels, 42).unwrap();
    assert_eq!((train.len(), test.len()), (182, 47));
    let train_set: BTreeSet<_> = train.iter().collect();
    assert!(test.iter().all(|i| !train_set.contains(i)));
}

#[test]
fn splits_depend_only_on_the_seed() {
    let labels = paper_labels();
    assert_eq!(stratified_kfold(&labels, 5, 3).unwrap(), stratified_kfold(&labels, 5, 3).unwrap());
    assert_ne!(
        stratified_kfold(&labels, 5, 3).unwrap().folds[0].test,
        stratified_kfold(&labels, 5, 4).unwrap().folds[0].test
    );
}

fn tiny_dataset(dir: &std::path::Path) -> Dataset {
    let cfg = GenerateConfig {
        counts: [3, 3, 2, 2],
        ..GenerateConfig::for_size(32)
    };
    let manifest = generate_dataset(&cfg, dir, 5).unwrap();
    Dataset::load(&manifest, None).unwrap()
}

#[test]
fn batches_cover_the_subset_with_a_short_tail() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(dir.path());
    let indices: Vec<usize> = (0..10).collect();
    let it = batch_iter(&ds, &indices, 4, Some(9), None);
    assert_eq!(it.batch_count(), 3);
    let batches: Vec<_> = it.map(Result::unwrap).collect();
    let sizes: Vec<usize> = batches.iter().map(|(x, _)| x.shape()[0]).collect();
    assert_eq!(sizes, [4, 4, 2]);
    assert!(batches.iter().all(|(x, _)| x.shape()[1..] == [3, 32, 32]));
    let mut labels: Vec<usize> = batches.iter().flat_map(|(_, l)| l.clone()).collect();
    labels.sort_unstable();
    let mut expected = ds.labels();
    expected.sort_unstable();
    assert_eq!(labels, expected);
}

#[test]
fn unshuffled_batches_keep_order_and_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(dir.path());
    let (x, labels) = batch_iter(&ds, &[7, 2], 2, None, None).next().unwrap().unwrap();
    assert_eq!(labels, [ds.samples[7].label, ds.samples[2].label]);
    assert_eq!(&x.data()[..3 * 32 * 32], ds.samples[7].image.data());
    assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn augmented_batches_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(dir.path());
    let aug = AugmentConfig::with_target(32);
    let indices: Vec<usize> = (0..ds.len()).collect();
    let run = |seed| -> Vec<_> { batch_iter(&ds, &indices, 4, Some(seed), Some(&aug)).map(Result::unwrap).collect() };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn manifest_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(dir.path());
    let again = Manifest::read(dir.path()).unwrap();
    assert_eq!(again.len(), 10);
    assert_eq!(again.class_counts(), [3, 3, 2, 2]);
    assert_eq!(again.labels(), ds.labels());
    let resized = Dataset::load(&again, Some(24)).unwrap();
    assert_eq!(resized.image_size(), Some((24, 24)));
}
