//! Stateful layer wrappers that cache activations for the backward pass.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm2d_backward, batchnorm2d_forward, conv2d_backward, conv2d_forward, relu,
    relu_backward, BatchNormCache, BatchNormParams, ConvGeometry, ConvParams, Mode,
};
use crate::tensor::{Scalar, Tensor};

/// Gradients keyed by parameter name.
pub type GradTable<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Trainable-designated weight, bias, gamma or beta.
    Param,
    /// Running statistic; saved in checkpoints but never optimized.
    Buffer,
}

pub(crate) struct GradSink<'a, T> {
    pub frozen: &'a BTreeSet<String>,
    pub table: GradTable<T>,
}

impl<T> GradSink<'_, T> {
    fn put(&mut self, name: &str, grad: Tensor<T>) {
        if !self.frozen.contains(name) {
            self.table.insert(name.to_string(), grad);
        }
    }
}

pub(crate) type Visit<'a, T> = dyn FnMut(&str, Role, &Tensor<T>) + 'a;
pub(crate) type VisitMut<'a, T> = dyn FnMut(&str, Role, &mut Tensor<T>) + 'a;

fn missing_cache(name: &str) -> Error {
    Error::State(format!("{name}: backward called without a cached forward"))
}

pub(crate) struct Conv<T> {
    weight_name: String,
    bias_name: String,
    pub params: ConvParams<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv<T> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        with_bias: bool,
    ) -> Self {
        Self {
            weight_name: format!("{name}.weight"),
            bias_name: format!("{name}.bias"),
            params: ConvParams::zeros(in_channels, out_channels, geometry, with_bias),
            input: None,
        }
    }

    /// Kaiming normal, fan-out mode, ReLU gain; bias zero.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let k = self.params.geometry.kernel;
        let fan_out = (self.params.out_channels * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_out).sqrt()).expect("positive std");
        for w in self.params.weight.data_mut() {
            *w = T::from_f64(normal.sample(rng));
        }
        if let Some(b) = &mut self.params.bias {
            b.data_mut().fill(T::zero());
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = conv2d_forward(x, &self.params)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor<T>, sink: &mut GradSink<'_, T>) -> Result<Tensor<T>> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| missing_cache(&self.weight_name))?;
        let grads = conv2d_backward(g, input, &self.params)?;
        sink.put(&self.weight_name, grads.weight);
        if let Some(b) = grads.bias {
            sink.put(&self.bias_name, b);
        }
        Ok(grads.input)
    }

    pub fn visit(&self, f: &mut Visit<'_, T>) {
        f(&self.weight_name, Role::Param, &self.params.weight);
        if let Some(b) = &self.params.bias {
            f(&self.bias_name, Role::Param, b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut<'_, T>) {
        f(&self.weight_name, Role::Param, &mut self.params.weight);
        if let Some(b) = &mut self.params.bias {
            f(&self.bias_name, Role::Param, b);
        }
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

pub(crate) struct BatchNorm<T> {
    names: [String; 4],
    pub params: BatchNormParams<T>,
    /// Frozen layers normalize with their running statistics and never
    /// update them.
    pub frozen: bool,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            names: ["gamma", "beta", "running_mean", "running_var"].map(|s| format!("{name}.{s}")),
            params: BatchNormParams::new(channels),
            frozen: false,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mode = if self.frozen { Mode::Inference } else { mode };
        let (y, cache) = batchnorm2d_forward(x, &mut self.params, mode)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor<T>, sink: &mut GradSink<'_, T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache(&self.names[0]))?;
        let grads = batchnorm2d_backward(g, cache, &self.params)?;
        sink.put(&self.names[0], grads.gamma);
        sink.put(&self.names[1], grads.beta);
        Ok(grads.input)
    }

    pub fn visit(&self, f: &mut Visit<'_, T>) {
        let p = &self.params;
        f(&self.names[0], Role::Param, &p.gamma);
        f(&self.names[1], Role::Param, &p.beta);
        f(&self.names[2], Role::Buffer, &p.running_mean);
        f(&self.names[3], Role::Buffer, &p.running_var);
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut<'_, T>) {
        let p = &mut self.params;
        f(&self.names[0], Role::Param, &mut p.gamma);
        f(&self.names[1], Role::Param, &mut p.beta);
        f(&self.names[2], Role::Buffer, &mut p.running_mean);
        f(&self.names[3], Role::Buffer, &mut p.running_var);
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn gamma_name(&self) -> &str {
        &self.names[0]
    }
}

/// Convolution (no bias) followed by batchnorm and an optional ReLU.
pub struct ConvBlock<T> {
    pub(crate) conv: Conv<T>,
    pub(crate) bn: BatchNorm<T>,
    pub relu: bool,
    output: Option<Tensor<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub(crate) fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        relu: bool,
    ) -> Self {
        Self {
            conv: Conv::new(&format!("{name}.conv"), in_channels, out_channels, geometry, false),
            bn: BatchNorm::new(&format!("{name}.bn"), out_channels),
            relu,
            output: None,
        }
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.conv.params.geometry
    }

    pub fn out_channels(&self) -> usize {
        self.conv.params.out_channels
    }

    pub(crate) fn init(&mut self, rng: &mut impl Rng) {
        self.conv.init(rng);
    }

    pub(crate) fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x)?;
        let y = self.bn.forward(&y, mode)?;
        if self.relu {
            let y = relu(&y);
            self.output = Some(y.clone());
            Ok(y)
        } else {
            Ok(y)
        }
    }

    pub(crate) fn backward(&mut self, g: &Tensor<T>, sink: &mut GradSink<'_, T>) -> Result<Tensor<T>> {
        let g = if self.relu {
            let out = self
                .output
                .as_ref()
                .ok_or_else(|| missing_cache("conv block relu"))?;
            relu_backward(g, out)?
        } else {
            g.clone()
        };
        let g = self.bn.backward(&g, sink)?;
        self.conv.backward(&g, sink)
    }

    pub(crate) fn visit(&self, f: &mut Visit<'_, T>) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut VisitMut<'_, T>) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }

    pub(crate) fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.bn.clear_cache();
        self.output = None;
    }

    pub(crate) fn batchnorm_layer_mut(&mut self) -> &mut BatchNorm<T> {
        &mut self.bn
    }

    /// Mutable access to this block's batchnorm parameters.
    pub fn batchnorm_mut(&mut self) -> &mut BatchNormParams<T> {
        &mut self.bn.params
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Identity,
    Projection,
}

/// Two conv blocks (the second without ReLU) plus an identity or 1x1
/// projection shortcut, followed by a post-addition ReLU.
pub struct BasicBlock<T> {
    pub kind: BlockKind,
    pub conv1: ConvBlock<T>,
    pub conv2: ConvBlock<T>,
    pub shortcut: Option<ConvBlock<T>>,
    pub post_add_relu: bool,
    output: Option<Tensor<T>>,
}

impl<T: Scalar> BasicBlock<T> {
    /// `dilation` applies to both 3x3 convolutions; the projection is never dilated.
    pub(crate) fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let kind = if in_channels == out_channels && stride == 1 {
            BlockKind::Identity
        } else {
            BlockKind::Projection
        };
        let g1 = ConvGeometry::new(3, stride, dilation, dilation);
        let g2 = ConvGeometry::new(3, 1, dilation, dilation);
        Self {
            kind,
            conv1: ConvBlock::new(&format!("{name}.conv1"), in_channels, out_channels, g1, true),
            conv2: ConvBlock::new(&format!("{name}.conv2"), out_channels, out_channels, g2, false),
            shortcut: (kind == BlockKind::Projection).then(|| {
                ConvBlock::new(
                    &format!("{name}.shortcut"),
                    in_channels,
                    out_channels,
                    ConvGeometry::new(1, stride, 0, 1),
                    false,
                )
            }),
            post_add_relu: true,
            output: None,
        }
    }

    pub(crate) fn init(&mut self, rng: &mut impl Rng) {
        self.conv1.init(rng);
        self.conv2.init(rng);
        if let Some(s) = &mut self.shortcut {
            s.init(rng);
        }
    }

    pub(crate) fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let main = self.conv1.forward(x, mode)?;
        let main = self.conv2.forward(&main, mode)?;
        let mut out = match &mut self.shortcut {
            Some(s) => s.forward(x, mode)?,
            None => x.clone(),
        };
        out.add_assign(&main)?;
        if self.post_add_relu {
            out = relu(&out);
            self.output = Some(out.clone());
        }
        Ok(out)
    }

    pub(crate) fn backward(&mut self, g: &Tensor<T>, sink: &mut GradSink<'_, T>) -> Result<Tensor<T>> {
        let g = if self.post_add_relu {
            let out = self
                .output
                .as_ref()
                .ok_or_else(|| missing_cache("basic block"))?;
            relu_backward(g, out)?
        } else {
            g.clone()
        };
        let g_main = self.conv2.backward(&g, sink)?;
        let mut g_in = self.conv1.backward(&g_main, sink)?;
        match &mut self.shortcut {
            Some(s) => g_in.add_assign(&s.backward(&g, sink)?)?,
            None => g_in.add_assign(&g)?,
        }
        Ok(g_in)
    }

    pub(crate) fn visit(&self, f: &mut Visit<'_, T>) {
        self.conv1.visit(f);
        self.conv2.visit(f);
        if let Some(s) = &self.shortcut {
            s.visit(f);
        }
    }

    pub(crate) fn visit_mut(&mut self, f: &mut VisitMut<'_, T>) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(f);
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.conv1.clear_cache();
        self.conv2.clear_cache();
        if let Some(s) = &mut self.shortcut {
            s.clear_cache();
        }
        self.output = None;
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }
}
