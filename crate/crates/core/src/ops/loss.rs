use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of an `N x C` tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = logits.dims2()?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean cross-entropy of `softmax(logits)` against integer labels, and its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label { label, classes: c });
    }
    logits.ensure_finite("logits")?;
    let batch = T::from_f64(n as f64);
    let mut grad = softmax(logits)?;
    let mut loss = T::zero();
    for ((row, logit_row), &label) in grad
        .data_mut()
        .chunks_exact_mut(c)
        .zip(logits.data().chunks_exact(c))
        .zip(labels)
    {
        let max = logit_row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = logit_row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
        loss += lse - logit_row[label];
        row[label] -= T::one();
        for v in row.iter_mut() {
            *v /= batch;
        }
    }
    Ok((loss / batch, grad))
}
