use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Bin `i` of `target` bins over an axis of length `extent`.
fn bin(i: usize, extent: usize, target: usize) -> (usize, usize) {
    (i * extent / target, (i + 1) * extent / target)
}

fn check_target(h: usize, w: usize, target: (usize, usize)) -> Result<()> {
    let (th, tw) = target;
    if th == 0 || tw == 0 || th > h || tw > w {
        return Err(Error::shape(format!(
            "adaptive pool target {target:?} invalid for {h}x{w} input"
        )));
    }
    Ok(())
}

/// Averages each cell of a `target` partition of the spatial axes.
pub fn adaptive_avgpool2d<T: Scalar>(input: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    check_target(h, w, target)?;
    let (th, tw) = target;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * th * tw);
    for plane in x.chunks_exact(h * w) {
        for i in 0..th {
            let (y0, y1) = bin(i, h, th);
            for j in 0..tw {
                let (x0, x1) = bin(j, w, tw);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for v in &plane[y * w + x0..y * w + x1] {
                        acc += *v;
                    }
                }
                out.push(acc / T::from_f64(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Tensor::new(vec![n, c, th, tw], out)
}

pub fn adaptive_avgpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape[..] else {
        return Err(Error::shape(format!("expected NCHW shape, got {input_shape:?}")));
    };
    let (gn, gc, th, tw) = grad_out.dims4()?;
    if (gn, gc) != (n, c) {
        return Err(Error::shape("pool gradient batch/channel mismatch"));
    }
    check_target(h, w, (th, tw))?;
    let mut grad = vec![T::zero(); n * c * h * w];
    for (plane, g) in grad.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(th * tw)) {
        for i in 0..th {
            let (y0, y1) = bin(i, h, th);
            for j in 0..tw {
                let (x0, x1) = bin(j, w, tw);
                let share = g[i * tw + j] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for v in &mut plane[y * w + x0..y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), grad)
}

/// Square-window average pooling with zero padding; padded cells count
/// toward the divisor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AvgPool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl AvgPool {
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        super::conv_output_extent(input, self.kernel, self.stride, self.padding, 1)
    }

    fn window(&self, o: usize, extent: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.padding as isize;
        let end = start + self.kernel as isize;
        (start.max(0) as usize, (end.max(0) as usize).min(extent))
    }

    pub fn forward<T: Scalar>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = input.dims4()?;
        let (ho, wo) = (self.output_extent(h)?, self.output_extent(w)?);
        let area = T::from_f64((self.kernel * self.kernel) as f64);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in input.data().chunks_exact(h * w) {
            for i in 0..ho {
                let (y0, y1) = self.window(i, h);
                for j in 0..wo {
                    let (x0, x1) = self.window(j, w);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for v in &plane[y * w + x0..y * w + x1] {
                            acc += *v;
                        }
                    }
                    out.push(acc / area);
                }
            }
        }
        Tensor::new(vec![n, c, ho, wo], out)
    }

    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
        let [n, c, h, w] = input_shape[..] else {
            return Err(Error::shape(format!("expected NCHW shape, got {input_shape:?}")));
        };
        let (ho, wo) = (self.output_extent(h)?, self.output_extent(w)?);
        if grad_out.shape() != [n, c, ho, wo] {
            return Err(Error::shape("avg pool gradient shape mismatch"));
        }
        let area = T::from_f64((self.kernel * self.kernel) as f64);
        let mut grad = vec![T::zero(); n * c * h * w];
        for (plane, g) in grad.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(ho * wo)) {
            for i in 0..ho {
                let (y0, y1) = self.window(i, h);
                for j in 0..wo {
                    let (x0, x1) = self.window(j, w);
                    let share = g[i * wo + j] / area;
                    for y in y0..y1 {
                        for v in &mut plane[y * w + x0..y * w + x1] {
                            *v += share;
                        }
                    }
                }
            }
        }
        Tensor::new(input_shape.to_vec(), grad)
    }
}
