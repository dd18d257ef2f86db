use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Training,
    Inference,
}

/// Per-channel affine parameters and running statistics of a batchnorm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    pub const DEFAULT_EPSILON: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(vec![channels], T::one()),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], T::one()),
            epsilon: Self::DEFAULT_EPSILON,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self, channels: usize) -> Result<()> {
        for (name, t) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [channels] {
                return Err(Error::shape(format!(
                    "batchnorm {name} has shape {:?}, input has {channels} channels",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    /// Normalized input, `(x - mean) / sqrt(var + eps)`.
    pub x_hat: Tensor<T>,
    /// `1 / sqrt(var + eps)` per channel.
    pub inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Batch normalization over N, H and W for each channel.
///
/// Training mode uses biased batch statistics and updates the running
/// statistics in place; inference mode reads them.
pub fn batchnorm2d_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    params.validate(c)?;
    let plane = h * w;
    let count = n * plane;
    let eps = T::from_f64(params.epsilon);
    let x = input.data();

    let (mean, var) = match mode {
        Mode::Training => {
            if count < 2 {
                return Err(Error::DegenerateVariance(count));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let values = || {
                    (0..n).flat_map(move |s| {
                        let start = (s * c + ch) * plane;
                        x[start..start + plane].iter().map(|v| v.as_f64())
                    })
                };
                let m = values().sum::<f64>() / count as f64;
                let v = values().map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
                mean[ch] = m;
                var[ch] = v;
            }
            let mom = params.momentum;
            let unbiased = count as f64 / (count as f64 - 1.0);
            for ch in 0..c {
                let rm = &mut params.running_mean.data_mut()[ch];
                *rm = T::from_f64((1.0 - mom) * rm.as_f64() + mom * mean[ch]);
                let rv = &mut params.running_var.data_mut()[ch];
                *rv = T::from_f64((1.0 - mom) * rv.as_f64() + mom * var[ch] * unbiased);
            }
            (
                mean.into_iter().map(T::from_f64).collect::<Vec<_>>(),
                var.into_iter().map(T::from_f64).collect::<Vec<_>>(),
            )
        }
        Mode::Inference => (
            params.running_mean.data().to_vec(),
            params.running_var.data().to_vec(),
        ),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let mut x_hat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let (gamma, beta) = (params.gamma.data(), params.beta.data());
    for s in 0..n {
        for ch in 0..c {
            let start = (s * c + ch) * plane;
            for i in start..start + plane {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BatchNormCache {
            mode,
            x_hat: Tensor::new(shape, x_hat)?,
            inv_std,
        },
    ))
}

/// Exact gradients through the batch statistics (training) or through the
/// fixed affine map (inference).
pub fn batchnorm2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    params: &BatchNormParams<T>,
) -> Result<BatchNormGrads<T>> {
    grad_out.ensure_same_shape(&cache.x_hat)?;
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let count = T::from_f64((n * plane) as f64);
    let g = grad_out.data();
    let xh = cache.x_hat.data();
    let gamma = params.gamma.data();

    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let start = (s * c + ch) * plane;
            for i in start..start + plane {
                sum_g[ch] += g[i];
                sum_gx[ch] += g[i] * xh[i];
            }
        }
    }

    let mut grad_in = vec![T::zero(); g.len()];
    for s in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] * cache.inv_std[ch];
            let start = (s * c + ch) * plane;
            for i in start..start + plane {
                grad_in[i] = match cache.mode {
                    Mode::Training => {
                        scale * (g[i] - sum_g[ch] / count - xh[i] * sum_gx[ch] / count)
                    }
                    Mode::Inference => scale * g[i],
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape().to_vec(), grad_in)?,
        gamma: Tensor::new(vec![c], sum_gx)?,
        beta: Tensor::new(vec![c], sum_g)?,
    })
}
