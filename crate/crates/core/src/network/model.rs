use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, ModelKind};
use super::layers::{BasicBlock, Conv, ConvBlock, GradSink, GradTable, Role};
use crate::error::{Error, Result};
use crate::ops::{adaptive_avgpool2d, adaptive_avgpool2d_backward, conv_output_extent, AvgPool, ConvGeometry, Mode};
use crate::tensor::{Scalar, Tensor};

/// Pooling that follows the light baseline's stem in place of max-pooling.
pub const STEM_POOL: AvgPool = AvgPool {
    kernel: 3,
    stride: 2,
    padding: 1,
};

/// Layer sequence of either architecture with named parameters.
pub struct ModelGraph<T = f32> {
    kind: ModelKind,
    config: ModelConfig,
    stem: Vec<ConvBlock<T>>,
    stem_pool: Option<AvgPool>,
    modules: Vec<Vec<BasicBlock<T>>>,
    classifier: Conv<T>,
    frozen: BTreeSet<String>,
    cache: Option<ForwardCache>,
    trace: Vec<(String, [usize; 4])>,
}

struct ForwardCache {
    stem_out_shape: Vec<usize>,
    pool_in_shape: Vec<usize>,
    batch: usize,
}

fn dims(t: &[usize]) -> [usize; 4] {
    [t[0], t[1], t[2], t[3]]
}

impl<T: Scalar> ModelGraph<T> {
    /// Dilated residual network with a three-block stem.
    pub fn proposed(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let [s0, s1, s2] = config.stem_channels;
        let stem = vec![
            ConvBlock::new("stem.0", 3, s0, ConvGeometry::new(3, 2, 1, 1), true),
            ConvBlock::new("stem.1", s0, s1, ConvGeometry::same3(), true),
            ConvBlock::new("stem.2", s1, s2, ConvGeometry::same3(), true),
        ];
        let modules = build_modules(config, s2, [1, 2, 1], config.module3_dilation);
        Ok(Self::assemble(ModelKind::Proposed, config, stem, None, modules, seed))
    }

    /// ResNet-18 prefix: 7x7 stride-2 stem, stride-2 average pool, then three
    /// undilated stages with strides 1/2/2.
    pub fn light_resnet(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c0 = config.module_channels[0];
        let stem = vec![ConvBlock::new("stem.0", 3, c0, ConvGeometry::new(7, 2, 3, 1), true)];
        let modules = build_modules(config, c0, [1, 2, 2], 1);
        Ok(Self::assemble(
            ModelKind::LightResnet,
            config,
            stem,
            Some(STEM_POOL),
            modules,
            seed,
        ))
    }

    pub fn build(kind: ModelKind, config: &ModelConfig, seed: u64) -> Result<Self> {
        match kind {
            ModelKind::Proposed => Self::proposed(config, seed),
            ModelKind::LightResnet => Self::light_resnet(config, seed),
        }
    }

    fn assemble(
        kind: ModelKind,
        config: &ModelConfig,
        stem: Vec<ConvBlock<T>>,
        stem_pool: Option<AvgPool>,
        modules: Vec<Vec<BasicBlock<T>>>,
        seed: u64,
    ) -> Self {
        let classifier = Conv::new(
            "classifier",
            config.module_channels[2],
            config.class_count,
            ConvGeometry::new(3, 1, 0, 1),
            true,
        );
        let mut model = Self {
            kind,
            config: config.clone(),
            stem,
            stem_pool,
            modules,
            classifier,
            frozen: BTreeSet::new(),
            cache: None,
            trace: Vec::new(),
        };
        model.reinitialize(seed);
        model
    }

    /// Re-draws every weight from `seed` and resets batchnorm state.
    pub fn reinitialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &mut self.stem {
            b.init(&mut rng);
        }
        for block in self.modules.iter_mut().flatten() {
            block.init(&mut rng);
        }
        self.classifier.init(&mut rng);
        self.visit_mut(&mut |name, _, t| {
            if name.ends_with(".gamma") || name.ends_with(".running_var") {
                t.data_mut().fill(T::one());
            } else if name.ends_with(".beta") || name.ends_with(".running_mean") {
                t.data_mut().fill(T::zero());
            }
        });
        self.cache = None;
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stem(&self) -> &[ConvBlock<T>] {
        &self.stem
    }

    pub fn modules(&self) -> &[Vec<BasicBlock<T>>] {
        &self.modules
    }

    pub fn modules_mut(&mut self) -> &mut [Vec<BasicBlock<T>>] {
        &mut self.modules
    }

    /// Calls `f` for every parameter and buffer in forward order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, Role, &Tensor<T>)) {
        for b in &self.stem {
            b.visit(f);
        }
        for block in self.modules.iter().flatten() {
            block.visit(f);
        }
        self.classifier.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Role, &mut Tensor<T>)) {
        for b in &mut self.stem {
            b.visit_mut(f);
        }
        for block in self.modules.iter_mut().flatten() {
            block.visit_mut(f);
        }
        self.classifier.visit_mut(f);
    }

    /// Names of all parameters (not buffers), in forward order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, role, _| {
            if role == Role::Param {
                names.push(name.to_string());
            }
        });
        names
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor<T>> {
        let mut found = None;
        self.visit(&mut |n, _, t| {
            if n == name {
                found = Some(t.clone());
            }
        });
        found
    }

    /// Element count of all parameters designated trainable at build time,
    /// regardless of later freezing. Running statistics are excluded.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, role, t| {
            if role == Role::Param {
                total += t.len();
            }
        });
        total
    }

    /// Element count of parameters that currently receive gradients.
    pub fn trainable_param_count(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |name, role, t| {
            if role == Role::Param && !self.frozen.contains(name) {
                total += t.len();
            }
        });
        total
    }

    /// Marks every parameter whose name starts with one of `prefixes` as
    /// frozen; returns the newly frozen names.
    pub fn freeze(&mut self, prefixes: &[String]) -> Vec<String> {
        let newly: Vec<String> = self
            .param_names()
            .into_iter()
            .filter(|n| prefixes.iter().any(|p| name_matches_prefix(n, p)))
            .filter(|n| !self.frozen.contains(n))
            .collect();
        self.frozen.extend(newly.iter().cloned());
        self.sync_batchnorm_freeze();
        newly
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
        self.sync_batchnorm_freeze();
    }

    /// A batchnorm layer whose scale is frozen also keeps its running
    /// statistics fixed.
    fn sync_batchnorm_freeze(&mut self) {
        let frozen = &self.frozen;
        let blocks = self.stem.iter_mut().chain(self.modules.iter_mut().flatten().flat_map(|b| {
            [Some(&mut b.conv1), Some(&mut b.conv2), b.shortcut.as_mut()]
                .into_iter()
                .flatten()
        }));
        for block in blocks {
            let bn = block.batchnorm_layer_mut();
            bn.frozen = frozen.contains(bn.gamma_name());
        }
    }

    /// Sets the running-statistics momentum of every batchnorm layer.
    pub fn set_batchnorm_momentum(&mut self, momentum: f64) {
        let blocks = self.stem.iter_mut().chain(self.modules.iter_mut().flatten().flat_map(|b| {
            [Some(&mut b.conv1), Some(&mut b.conv2), b.shortcut.as_mut()]
                .into_iter()
                .flatten()
        }));
        for block in blocks {
            block.batchnorm_mut().momentum = momentum;
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !self.frozen.contains(name)
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    /// Activation shapes recorded by the most recent forward pass.
    pub fn last_trace(&self) -> &[(String, [usize; 4])] {
        &self.trace
    }

    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (n, c, h, w) = batch.dims4()?;
        if c != 3 || (h, w) != self.config.input_size {
            return Err(Error::shape(format!(
                "model expects Nx3x{}x{} input, got {:?}",
                self.config.input_size.0,
                self.config.input_size.1,
                batch.shape()
            )));
        }
        self.trace.clear();
        let mut x = batch.clone();
        for (i, b) in self.stem.iter_mut().enumerate() {
            x = b.forward(&x, mode)?;
            self.trace.push((format!("stem.{i}"), dims(x.shape())));
        }
        let stem_out_shape = x.shape().to_vec();
        if let Some(pool) = &self.stem_pool {
            x = pool.forward(&x)?;
            self.trace.push(("stem.pool".into(), dims(x.shape())));
        }
        for (m, module) in self.modules.iter_mut().enumerate() {
            for (i, block) in module.iter_mut().enumerate() {
                x = block.forward(&x, mode)?;
                self.trace.push((format!("module{}.{i}", m + 1), dims(x.shape())));
            }
        }
        let pool_in_shape = x.shape().to_vec();
        x = adaptive_avgpool2d(&x, self.config.classifier_pool)?;
        self.trace.push(("pool".into(), dims(x.shape())));
        x = self.classifier.forward(&x)?;
        self.trace.push(("classifier".into(), dims(x.shape())));
        let (_, classes, oh, ow) = x.dims4()?;
        if (oh, ow) != (1, 1) {
            return Err(Error::shape(format!("classifier produced {oh}x{ow} maps, expected 1x1")));
        }
        self.cache = Some(ForwardCache {
            stem_out_shape,
            pool_in_shape,
            batch: n,
        });
        x.reshape(vec![n, classes])
    }

    /// Inference-mode forward that drops cached activations afterwards.
    pub fn predict(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.forward(batch, Mode::Inference);
        self.clear_cache();
        logits
    }

    /// Gradients of `sum(grad_logits * logits)` for every trainable parameter.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<GradTable<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward".into()))?;
        let (n, classes) = grad_logits.dims2()?;
        if n != cache.batch || classes != self.config.class_count {
            return Err(Error::shape(format!(
                "grad_logits shape {:?} does not match the forward batch",
                grad_logits.shape()
            )));
        }
        let mut sink = GradSink {
            frozen: &self.frozen,
            table: GradTable::new(),
        };
        let g = grad_logits.clone().reshape(vec![n, classes, 1, 1])?;
        let g = self.classifier.backward(&g, &mut sink)?;
        let mut g = adaptive_avgpool2d_backward(&g, &cache.pool_in_shape)?;
        for module in self.modules.iter_mut().rev() {
            for block in module.iter_mut().rev() {
                g = block.backward(&g, &mut sink)?;
            }
        }
        if let Some(pool) = &self.stem_pool {
            g = pool.backward(&g, &cache.stem_out_shape)?;
        }
        for b in self.stem.iter_mut().rev() {
            g = b.backward(&g, &mut sink)?;
        }
        let table = sink.table;
        self.clear_cache();
        Ok(table)
    }

    pub fn clear_cache(&mut self) {
        for b in &mut self.stem {
            b.clear_cache();
        }
        for block in self.modules.iter_mut().flatten() {
            block.clear_cache();
        }
        self.classifier.clear_cache();
        self.cache = None;
    }

    /// Copies every parameter and buffer into a model of another precision.
    pub fn cast<U: Scalar>(&self) -> Result<ModelGraph<U>> {
        let mut other = ModelGraph::<U>::build(self.kind, &self.config, 0)?;
        let mut values = std::collections::HashMap::new();
        self.visit(&mut |name, _, t| {
            values.insert(name.to_string(), t.cast::<U>());
        });
        other.visit_mut(&mut |name, _, t| {
            if let Some(v) = values.remove(name) {
                *t = v;
            }
        });
        other.frozen = self.frozen.clone();
        other.sync_batchnorm_freeze();
        Ok(other)
    }
}

/// `prefix` matches whole dotted components: "stem" matches "stem.0.conv.weight"
/// but not "stemx.weight".
pub fn name_matches_prefix(name: &str, prefix: &str) -> bool {
    let prefix = prefix.trim_end_matches('.');
    name == prefix
        || (name.starts_with(prefix) && name.as_bytes().get(prefix.len()) == Some(&b'.'))
}

fn build_modules<T: Scalar>(
    config: &ModelConfig,
    stem_out: usize,
    strides: [usize; 3],
    last_dilation: usize,
) -> Vec<Vec<BasicBlock<T>>> {
    let mut in_ch = stem_out;
    (0..3)
        .map(|m| {
            let out_ch = config.module_channels[m];
            let dilation = if m == 2 { last_dilation } else { 1 };
            (0..config.blocks_per_module)
                .map(|i| {
                    let stride = if i == 0 { strides[m] } else { 1 };
                    let block = BasicBlock::new(&format!("module{}.{i}", m + 1), in_ch, out_ch, stride, dilation);
                    in_ch = out_ch;
                    block
                })
                .collect()
        })
        .collect()
}

/// Closed-form parameter count from the configuration alone.
pub fn analytic_param_count(kind: ModelKind, config: &ModelConfig) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k;
    let bn = |c: usize| 2 * c;
    let mut total = 0;
    let mut cin = match kind {
        ModelKind::Proposed => {
            let mut prev = 3;
            for &c in &config.stem_channels {
                total += conv(prev, c, 3) + bn(c);
                prev = c;
            }
            prev
        }
        ModelKind::LightResnet => {
            let c = config.module_channels[0];
            total += conv(3, c, 7) + bn(c);
            c
        }
    };
    let strides = match kind {
        ModelKind::Proposed => [1, 2, 1],
        ModelKind::LightResnet => [1, 2, 2],
    };
    for (m, &cout) in config.module_channels.iter().enumerate() {
        for i in 0..config.blocks_per_module {
            let stride = if i == 0 { strides[m] } else { 1 };
            total += conv(cin, cout, 3) + bn(cout) + conv(cout, cout, 3) + bn(cout);
            if cin != cout || stride != 1 {
                total += conv(cin, cout, 1) + bn(cout);
            }
            cin = cout;
        }
    }
    total + conv(cin, config.class_count, 3) + config.class_count
}

/// Activation shapes after each stage, derived from the configuration with
/// [`conv_output_extent`] only.
pub fn analytic_shapes(kind: ModelKind, config: &ModelConfig, batch: usize) -> Result<Vec<(String, [usize; 4])>> {
    let (mut h, mut w) = config.input_size;
    let mut out = Vec::new();
    let apply = |h: &mut usize, w: &mut usize, k, s, p, d| -> Result<()> {
        *h = conv_output_extent(*h, k, s, p, d)?;
        *w = conv_output_extent(*w, k, s, p, d)?;
        Ok(())
    };
    let strides = match kind {
        ModelKind::Proposed => {
            let strides = [2, 1, 1];
            for (i, &c) in config.stem_channels.iter().enumerate() {
                apply(&mut h, &mut w, 3, strides[i], 1, 1)?;
                out.push((format!("stem.{i}"), [batch, c, h, w]));
            }
            [1, 2, 1]
        }
        ModelKind::LightResnet => {
            let c = config.module_channels[0];
            apply(&mut h, &mut w, 7, 2, 3, 1)?;
            out.push(("stem.0".into(), [batch, c, h, w]));
            apply(&mut h, &mut w, 3, 2, 1, 1)?;
            out.push(("stem.pool".into(), [batch, c, h, w]));
            [1, 2, 2]
        }
    };
    for (m, &c) in config.module_channels.iter().enumerate() {
        let d = if m == 2 && kind == ModelKind::Proposed {
            config.module3_dilation
        } else {
            1
        };
        for i in 0..config.blocks_per_module {
            let s = if i == 0 { strides[m] } else { 1 };
            apply(&mut h, &mut w, 3, s, d, d)?;
            apply(&mut h, &mut w, 3, 1, d, d)?;
            out.push((format!("module{}.{i}", m + 1), [batch, c, h, w]));
        }
    }
    let (ph, pw) = config.classifier_pool;
    if ph > h || pw > w {
        return Err(Error::shape(format!(
            "classifier pool {:?} exceeds {h}x{w} feature map",
            config.classifier_pool
        )));
    }
    out.push(("pool".into(), [batch, config.module_channels[2], ph, pw]));
    let (oh, ow) = (
        conv_output_extent(ph, 3, 1, 0, 1)?,
        conv_output_extent(pw, 3, 1, 0, 1)?,
    );
    out.push(("classifier".into(), [batch, config.class_count, oh, ow]));
    Ok(out)
}
