use rand::seq::SliceRandom;

use crate::error::Result;
use crate::seed;
use crate::tensor::Tensor;

use super::augment::{AugmentConfig, Augmentation};
use super::sample::Dataset;

/// Yields `(N×3×H×W batch, labels)` over a subset of a dataset.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    augment: Option<(&'a AugmentConfig, u64)>,
}

/// With `seed`, the indices are shuffled by it; augmentation (when given)
/// draws per sample from a stream derived from the same seed.
pub fn batch_iter<'a>(
    dataset: &'a Dataset,
    indices: &[usize],
    batch_size: usize,
    seed: Option<u64>,
    augment: Option<&'a AugmentConfig>,
) -> BatchIter<'a> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order = indices.to_vec();
    if let Some(s) = seed {
        order.shuffle(&mut seed::rng(s, &[0]));
    }
    BatchIter {
        dataset,
        order,
        batch_size,
        cursor: 0,
        augment: augment.map(|a| (a, seed.unwrap_or(0))),
    }
}

impl BatchIter<'_> {
    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<(Tensor<f32>, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let mut images = Vec::with_capacity(end - self.cursor);
        let mut labels = Vec::with_capacity(end - self.cursor);
        for pos in self.cursor..end {
            let sample = &self.dataset.samples[self.order[pos]];
            let image = match self.augment {
                Some((cfg, s)) => {
                    let mut rng = seed::rng(s, &[1, pos as u64]);
                    match Augmentation::draw(cfg, &mut rng).apply(&sample.image, cfg.target_size) {
                        Ok(img) => img,
                        Err(e) => return Some(Err(e)),
                    }
                }
                None => sample.image.clone(),
            };
            images.push(image);
            labels.push(sample.label);
        }
        self.cursor = end;
        Some(Tensor::stack(&images).map(|t| (t, labels)))
    }
}
