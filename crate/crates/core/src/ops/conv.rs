use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Kernel size, stride, zero padding and dilation of a square 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub const fn new(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            dilation,
        }
    }

    /// `k=3, s=1, p=1, d=1`.
    pub const fn same3() -> Self {
        Self::new(3, 1, 1, 1)
    }

    pub fn output_extent(&self, input: usize) -> Result<usize> {
        conv_output_extent(input, self.kernel, self.stride, self.padding, self.dilation)
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<usize> {
    if kernel == 0 || stride == 0 || dilation == 0 {
        return Err(Error::Config(format!(
            "kernel, stride and dilation must be positive (k={kernel}, s={stride}, d={dilation})"
        )));
    }
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    if input == 0 || padded < span {
        return Err(Error::KernelExceedsInput {
            extent: input,
            padding,
            span,
        });
    }
    Ok((padded - span) / stride + 1)
}

/// Weights and geometry of one convolution. Weight layout is `(out, in, k, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        with_bias: bool,
    ) -> Self {
        let k = geometry.kernel;
        Self {
            in_channels,
            out_channels,
            geometry,
            weight: Tensor::zeros(vec![out_channels, in_channels, k, k]),
            bias: with_bias.then(|| Tensor::zeros(vec![out_channels])),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.geometry.kernel;
        let want = [self.out_channels, self.in_channels, k, k];
        if self.weight.shape() != want {
            return Err(Error::shape(format!(
                "conv weight shape {:?}, expected {want:?}",
                self.weight.shape()
            )));
        }
        if let Some(b) = &self.bias {
            if b.shape() != [self.out_channels] {
                return Err(Error::shape(format!(
                    "conv bias shape {:?}, expected [{}]",
                    b.shape(),
                    self.out_channels
                )));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    /// Output shape for an NCHW input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        let [n, c, h, w] = input[..] else {
            return Err(Error::shape(format!("expected NCHW input, got {input:?}")));
        };
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        Ok([
            n,
            self.out_channels,
            self.geometry.output_extent(h)?,
            self.geometry.output_extent(w)?,
        ])
    }
}

struct Plan {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    g: ConvGeometry,
}

impl Plan {
    fn rows(&self) -> usize {
        self.c * self.g.kernel * self.g.kernel
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input offset along one axis for output index `o` and kernel tap `t`.
    #[inline]
    fn tap(&self, o: usize, t: usize) -> isize {
        (o * self.g.stride + t * self.g.dilation) as isize - self.g.padding as isize
    }

    fn im2col<T: Scalar>(&self, input: &[T], cols: &mut [T]) {
        let k = self.g.kernel;
        let n_cols = self.cols();
        for c in 0..self.c {
            let plane = &input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for a in 0..k {
                for b in 0..k {
                    let row = (c * k + a) * k + b;
                    let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                    for i in 0..self.ho {
                        let y = self.tap(i, a);
                        let out_row = &mut dst[i * self.wo..(i + 1) * self.wo];
                        if y < 0 || y >= self.h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for (j, v) in out_row.iter_mut().enumerate() {
                            let x = self.tap(j, b);
                            *v = if x < 0 || x >= self.w as isize {
                                T::zero()
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], grad: &mut [T]) {
        let k = self.g.kernel;
        let n_cols = self.cols();
        for c in 0..self.c {
            let plane = &mut grad[c * self.h * self.w..(c + 1) * self.h * self.w];
            for a in 0..k {
                for b in 0..k {
                    let row = (c * k + a) * k + b;
                    let src = &cols[row * n_cols..(row + 1) * n_cols];
                    for i in 0..self.ho {
                        let y = self.tap(i, a);
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for j in 0..self.wo {
                            let x = self.tap(j, b);
                            if x >= 0 && x < self.w as isize {
                                dst[x as usize] += src[i * self.wo + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn plan<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<(usize, Plan)> {
    params.validate()?;
    let [n, _, ho, wo] = params.output_shape(input.shape())?;
    let (_, c, h, w) = input.dims4()?;
    Ok((
        n,
        Plan {
            c,
            h,
            w,
            ho,
            wo,
            g: params.geometry,
        },
    ))
}

/// Zero-padded, dilated 2-D cross-correlation (no kernel flip).
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let (n, plan) = plan(input, params)?;
    input.ensure_finite("conv input")?;
    params.weight.ensure_finite("conv weight")?;
    if let Some(b) = &params.bias {
        b.ensure_finite("conv bias")?;
    }
    let o = params.out_channels;
    let (rows, n_cols) = (plan.rows(), plan.cols());
    let in_stride = plan.c * plan.h * plan.w;
    let mut out = vec![T::zero(); n * o * n_cols];
    let mut cols = vec![T::zero(); rows * n_cols];
    let weight = MatRef::new(params.weight.data(), o, rows);
    for s in 0..n {
        let x = &input.data()[s * in_stride..(s + 1) * in_stride];
        let dst = &mut out[s * o * n_cols..(s + 1) * o * n_cols];
        plan.im2col(x, &mut cols);
        gemm(weight, MatRef::new(&cols, rows, n_cols), T::zero(), dst);
        if let Some(bias) = &params.bias {
            for (oc, &b) in bias.data().iter().enumerate() {
                for v in &mut dst[oc * n_cols..(oc + 1) * n_cols] {
                    *v += b;
                }
            }
        }
    }
    Tensor::new(vec![n, o, plan.ho, plan.wo], out)
}

/// Gradients of `sum(grad_out * conv2d_forward(input, params))`.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    params: &ConvParams<T>,
) -> Result<ConvGrads<T>> {
    let (n, plan) = plan(input, params)?;
    let o = params.out_channels;
    let expect = [n, o, plan.ho, plan.wo];
    if grad_out.shape() != expect {
        return Err(Error::shape(format!(
            "conv grad_out shape {:?}, expected {expect:?}",
            grad_out.shape()
        )));
    }
    let (rows, n_cols) = (plan.rows(), plan.cols());
    let in_stride = plan.c * plan.h * plan.w;
    let mut grad_input = vec![T::zero(); input.len()];
    let mut grad_weight = vec![T::zero(); params.weight.len()];
    let mut cols = vec![T::zero(); rows * n_cols];
    let mut grad_cols = vec![T::zero(); rows * n_cols];
    let weight = MatRef::new(params.weight.data(), o, rows);
    for s in 0..n {
        let x = &input.data()[s * in_stride..(s + 1) * in_stride];
        let g = MatRef::new(&grad_out.data()[s * o * n_cols..(s + 1) * o * n_cols], o, n_cols);
        plan.im2col(x, &mut cols);
        gemm(g, MatRef::new(&cols, rows, n_cols).t(), T::one(), &mut grad_weight);
        gemm(weight.t(), g, T::zero(), &mut grad_cols);
        plan.col2im(&grad_cols, &mut grad_input[s * in_stride..(s + 1) * in_stride]);
    }
    let grad_bias = params.bias.as_ref().map(|_| {
        let mut gb = vec![T::zero(); o];
        for s in 0..n {
            for (oc, acc) in gb.iter_mut().enumerate() {
                let start = (s * o + oc) * n_cols;
                *acc += grad_out.data()[start..start + n_cols].iter().copied().sum::<T>();
            }
        }
        Tensor::new(vec![o], gb).expect("bias gradient shape")
    });
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        weight: Tensor::new(params.weight.shape().to_vec(), grad_weight)?,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop evaluation of the cross-correlation sum.
    fn reference<T: Scalar>(input: &Tensor<T>, p: &ConvParams<T>) -> Tensor<T> {
        let (n, c, h, w) = input.dims4().unwrap();
        let g = p.geometry;
        let ho = g.output_extent(h).unwrap();
        let wo = g.output_extent(w).unwrap();
        let k = g.kernel;
        Tensor::from_fn(vec![n, p.out_channels, ho, wo], |idx| {
            let j = idx % wo;
            let i = (idx / wo) % ho;
            let o = (idx / (wo * ho)) % p.out_channels;
            let s = idx / (wo * ho * p.out_channels);
            let mut acc = p.bias.as_ref().map_or(T::zero(), |b| b.data()[o]);
            for ci in 0..c {
                for a in 0..k {
                    for b in 0..k {
                        let y = (i * g.stride + a * g.dilation) as isize - g.padding as isize;
                        let x = (j * g.stride + b * g.dilation) as isize - g.padding as isize;
                        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            continue;
                        }
                        let iv = input.data()[((s * c + ci) * h + y as usize) * w + x as usize];
                        let wv = p.weight.data()[((o * c + ci) * k + a) * k + b];
                        acc += iv * wv;
                    }
                }
            }
            acc
        })
    }

    fn grid3() -> Tensor<f64> {
        Tensor::from_fn(vec![1, 1, 3, 3], |i| (i + 1) as f64)
    }

    fn ones_kernel(g: ConvGeometry) -> ConvParams<f64> {
        let mut p = ConvParams::zeros(1, 1, g, false);
        p.weight = Tensor::full(vec![1, 1, 3, 3], 1.0);
        p
    }

    #[test]
    fn output_extent_examples() {
        assert_eq!(conv_output_extent(224, 3, 1, 1, 1).unwrap(), 224);
        assert_eq!(conv_output_extent(224, 3, 1, 2, 2).unwrap(), 224);
        assert_eq!(conv_output_extent(9, 3, 2, 1, 1).unwrap(), 5);
        assert!(matches!(
            conv_output_extent(2, 3, 1, 0, 2),
            Err(Error::KernelExceedsInput { .. })
        ));
    }

    #[test]
    fn output_extent_matches_placement_enumeration() {
        for input in 1..12usize {
            for k in 1..5 {
                for s in 1..4 {
                    for p in 0..3 {
                        for d in 1..4 {
                            let span = d * (k - 1) + 1;
                            let count = (0..input + 2 * p)
                                .filter(|start| start % s == 0 && start + span <= input + 2 * p)
                                .count();
                            match conv_output_extent(input, k, s, p, d) {
                                Ok(e) => assert_eq!(e, count, "in={input} k={k} s={s} p={p} d={d}"),
                                Err(_) => assert_eq!(count, 0),
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn same_padding_ones_kernel() {
        let out = conv2d_forward(&grid3(), &ones_kernel(ConvGeometry::same3())).unwrap();
        assert_eq!(
            out.data(),
            &[12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0]
        );
    }

    #[test]
    fn dilated_ones_kernel() {
        let out = conv2d_forward(&grid3(), &ones_kernel(ConvGeometry::new(3, 1, 2, 2))).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        assert_eq!(out.data()[4], 5.0);
        assert_eq!(out.data()[0], 20.0);
    }

    #[test]
    fn zero_weight_yields_bias() {
        let mut p = ConvParams::<f32>::zeros(2, 3, ConvGeometry::same3(), true);
        p.bias = Some(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
        let x = Tensor::from_fn(vec![2, 2, 4, 5], |i| i as f32 * 0.1);
        let out = conv2d_forward(&x, &p).unwrap();
        for (idx, v) in out.data().iter().enumerate() {
            let oc = (idx / 20) % 3;
            assert_eq!(*v, [0.5, -1.0, 2.0][oc]);
        }
    }

    #[test]
    fn matches_reference_on_assorted_geometries() {
        let geometries = [
            ConvGeometry::new(3, 1, 1, 1),
            ConvGeometry::new(3, 2, 1, 1),
            ConvGeometry::new(3, 1, 2, 2),
            ConvGeometry::new(1, 2, 0, 1),
            ConvGeometry::new(7, 2, 3, 1),
            ConvGeometry::new(3, 3, 0, 2),
        ];
        for g in geometries {
            let mut p = ConvParams::<f64>::zeros(3, 4, g, true);
            for (i, w) in p.weight.data_mut().iter_mut().enumerate() {
                *w = ((i * 37 % 23) as f64 - 11.0) / 7.0;
            }
            p.bias = Some(Tensor::from_fn(vec![4], |i| i as f64 - 1.5));
            let x = Tensor::from_fn(vec![2, 3, 9, 8], |i| ((i * 13 % 17) as f64 - 8.0) / 3.0);
            let got = conv2d_forward(&x, &p).unwrap();
            let want = reference(&x, &p);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{g:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let p = ConvParams::<f32>::zeros(2, 1, ConvGeometry::same3(), false);
        let x = Tensor::zeros(vec![1, 3, 4, 4]);
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_weight_is_numeric_error() {
        let mut p = ConvParams::<f32>::zeros(1, 1, ConvGeometry::same3(), false);
        p.weight.data_mut()[3] = f32::NAN;
        let x = Tensor::zeros(vec![1, 1, 4, 4]);
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut p = ConvParams::<f64>::zeros(2, 2, ConvGeometry::same3(), true);
        p.weight = Tensor::full(vec![2, 2, 3, 3], 0.3);
        let x = Tensor::from_fn(vec![1, 2, 4, 4], |i| i as f64);
        let g = conv2d_backward(&Tensor::zeros(vec![1, 2, 4, 4]), &x, &p).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_one_hot_grad_weight_is_all_ones() {
        let p = ones_kernel(ConvGeometry::same3());
        let x = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let mut g = Tensor::zeros(vec![1, 1, 3, 3]);
        g.data_mut()[4] = 1.0;
        let grads = conv2d_backward(&g, &x, &p).unwrap();
        assert_eq!(grads.weight.data(), &[1.0; 9]);
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let p = ConvParams::<f32>::zeros(1, 1, ConvGeometry::same3(), false);
        let x = Tensor::zeros(vec![1, 1, 4, 4]);
        let g = Tensor::zeros(vec![1, 1, 3, 3]);
        assert!(matches!(conv2d_backward(&g, &x, &p), Err(Error::Shape(_))));
    }
}
