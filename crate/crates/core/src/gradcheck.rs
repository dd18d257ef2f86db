//! Central finite-difference checks of every analytic gradient, in f64.
//!
//! Each check defines a scalar loss `L = sum(r * f(inputs))` for a fixed
//! random `r` (or the cross-entropy for losses and whole models), computes
//! the analytic gradient of `L` with respect to every input tensor and
//! compares it against `(L(x + h) - L(x - h)) / 2h` on a seeded sample of
//! elements.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::network::layers::{BasicBlock, GradSink, Role};
use crate::network::{ModelConfig, ModelGraph, ModelKind, STEM_POOL};
use crate::ops::{
    adaptive_avgpool2d, adaptive_avgpool2d_backward, batchnorm2d_backward, batchnorm2d_forward,
    conv2d_backward, conv2d_forward, relu, relu_backward, softmax_cross_entropy, BatchNormParams,
    ConvGeometry, ConvParams, Mode,
};
use crate::seed;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding compare absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Elements sampled per tensor; smaller tensors are checked fully.
    pub max_elements: usize,
    /// Scales the analytic conv weight gradient by 1.01 in the conv checks.
    pub corrupt_conv_backward: bool,
    pub include_models: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_elements: 32,
            corrupt_conv_backward: false,
            include_models: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Largest relative error over all checked elements of all tensors.
    pub max_rel_error: f64,
    /// Tensor holding the largest error.
    pub worst_tensor: String,
    pub elements: usize,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<34}{:>14}{:>11}{:>9}  {}\n", "check", "max rel err", "tolerance", "elems", "result");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<34}{:>14.3e}{:>11.0e}{:>9}  {}",
                c.name,
                c.max_rel_error,
                c.tolerance,
                c.elements,
                if c.passed { "pass" } else { "FAIL" }
            );
        }
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

fn weighted_sum(r: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// Returns the loss and, when asked, the gradient for every input tensor.
type Objective<'a> = dyn FnMut(&[Tensor<f64>], bool) -> Result<(f64, Vec<Tensor<f64>>)> + 'a;

fn check(
    name: &str,
    names: &[String],
    mut tensors: Vec<Tensor<f64>>,
    tolerance: f64,
    opts: &GradcheckOptions,
    objective: &mut Objective<'_>,
) -> Result<CheckResult> {
    let (_, analytic) = objective(&tensors, true)?;
    let mut rng = seed::rng(opts.seed, &[name.len() as u64, name.bytes().map(u64::from).sum()]);
    let mut worst = (0.0f64, String::new());
    let mut elements = 0;
    for k in 0..tensors.len() {
        let len = tensors[k].len();
        let picks: Vec<usize> = if len <= opts.max_elements {
            (0..len).collect()
        } else {
            sample(&mut rng, len, opts.max_elements).into_vec()
        };
        for i in picks {
            let orig = tensors[k].data()[i];
            tensors[k].data_mut()[i] = orig + STEP;
            let (plus, _) = objective(&tensors, false)?;
            tensors[k].data_mut()[i] = orig - STEP;
            let (minus, _) = objective(&tensors, false)?;
            tensors[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(analytic[k].data()[i], numeric);
            if err > worst.0 || worst.1.is_empty() {
                worst = (err.max(worst.0), names[k].clone());
            }
            elements += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error: worst.0,
        worst_tensor: worst.1,
        elements,
        tolerance,
        passed: worst.0 < tolerance,
    })
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn conv_check(name: &str, geometry: ConvGeometry, bias: bool, opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = seed::rng(opts.seed, &[1, geometry.stride as u64, geometry.dilation as u64]);
    let (ci, co, hw) = (2, 3, 7);
    let x = normal(&[2, ci, hw, hw], &mut rng);
    let template = ConvParams::<f64>::zeros(ci, co, geometry, bias);
    let w = normal(template.weight.shape(), &mut rng);
    let out = template.output_shape(x.shape())?;
    let r = normal(&out, &mut rng);
    let mut tensors = vec![x, w];
    let mut names = strings(&["input", "weight"]);
    if bias {
        tensors.push(normal(&[co], &mut rng));
        names.push("bias".into());
    }
    let corrupt = opts.corrupt_conv_backward;
    check(name, &names, tensors, LAYER_TOLERANCE, opts, &mut |t, grads| {
        let params = ConvParams {
            weight: t[1].clone(),
            bias: t.get(2).cloned(),
            ..template.clone()
        };
        let y = conv2d_forward(&t[0], &params)?;
        let loss = weighted_sum(&r, &y);
        if !grads {
            return Ok((loss, vec![]));
        }
        let g = conv2d_backward(&r, &t[0], &params)?;
        let mut gw = g.weight;
        if corrupt {
            gw.scale(1.01);
        }
        let mut out = vec![g.input, gw];
        out.extend(g.bias);
        Ok((loss, out))
    })
}

fn batchnorm_check(mode: Mode, opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = seed::rng(opts.seed, &[2, mode as u64]);
    let c = 3;
    let x = normal(&[3, c, 4, 4], &mut rng).map(|v| 1.5 * v + 0.3);
    let gamma = normal(&[c], &mut rng).map(|v| 1.0 + 0.3 * v);
    let beta = normal(&[c], &mut rng);
    let mut base = BatchNormParams::<f64>::new(c);
    base.running_mean = normal(&[c], &mut rng);
    base.running_var = Tensor::from_fn([c], |_| rng.gen_range(0.5..2.0));
    let r = normal(x.shape(), &mut rng);
    let name = match mode {
        Mode::Training => "batchnorm (training)",
        Mode::Inference => "batchnorm (inference)",
    };
    check(name, &strings(&["input", "gamma", "beta"]), vec![x, gamma, beta], LAYER_TOLERANCE, opts, &mut |t, grads| {
        let mut p = BatchNormParams {
            gamma: t[1].clone(),
            beta: t[2].clone(),
            ..base.clone()
        };
        let (y, cache) = batchnorm2d_forward(&t[0], &mut p, mode)?;
        let loss = weighted_sum(&r, &y);
        if !grads {
            return Ok((loss, vec![]));
        }
        let g = batchnorm2d_backward(&r, &cache, &p)?;
        Ok((loss, vec![g.input, g.gamma, g.beta]))
    })
}

fn relu_check(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = seed::rng(opts.seed, &[3]);
    // keep every element well away from the kink at zero
    let x = normal(&[2, 2, 5, 5], &mut rng).map(|v| v.signum() * (0.05 + v.abs()));
    let r = normal(x.shape(), &mut rng);
    check("relu", &strings(&["input"]), vec![x], LAYER_TOLERANCE, opts, &mut |t, grads| {
        let loss = weighted_sum(&r, &relu(&t[0]));
        let g = if grads { vec![relu_backward(&r, &t[0])?] } else { vec![] };
        Ok((loss, g))
    })
}

fn adaptive_pool_check(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = seed::rng(opts.seed, &[4]);
    let x = normal(&[2, 3, 7, 8], &mut rng);
    let r = normal(&[2, 3, 3, 3], &mut rng);
    let shape = x.shape().to_vec();
    check("adaptive avg pool 3x3", &strings(&["input"]), vec![x], LAYER_TOLERANCE, opts, &mut |t, grads| {
        let loss = weighted_sum(&r, &adaptive_avgpool2d(&t[0], (3, 3))?);
        let g = if grads { vec![adaptive_avgpool2d_backward(&r, &shape)?] } else { vec![] };
        Ok((loss, g))
    })
}

fn avg_pool_check(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = seed::rng(opts.seed, &[5]);
    let x = normal(&[2, 2, 7, 7], &mut rng);
    let pool = STEM_POOL;
    let out = pool.forward(&x)?;
    let r = normal(out.shape(), &mut rng);
    let shape = x.shape().to_vec();
    check("avg pool k3 s2 p1", &strings(&["input"]), vec![x], LAYER_TOLERANCE, opts, &mut |t, grads| {
        let loss = weighted_sum(&r, &pool.forward(&t[0])?);
        let g = if grads { vec![pool.backward(&r, &shape)?] } else { vec![] };
        Ok((loss, g))
    })
}

fn cross_entropy_check(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = seed::rng(opts.seed, &[6]);
    let logits = normal(&[5, 4], &mut rng).map(|v| 2.0 * v);
    let labels = [0, 3, 1, 2, 3];
    check("softmax cross-entropy", &strings(&["logits"]), vec![logits], LAYER_TOLERANCE, opts, &mut |t, grads| {
        let (loss, g) = softmax_cross_entropy(&t[0], &labels)?;
        Ok((loss, if grads { vec![g] } else { vec![] }))
    })
}

fn param_names<F>(visit: F) -> Vec<String>
where
    F: FnOnce(&mut dyn FnMut(&str, Role, &Tensor<f64>)),
{
    let mut names = Vec::new();
    visit(&mut |n, role, _| {
        if role == Role::Param {
            names.push(n.to_string());
        }
    });
    names
}

fn block_check(
    name: &str,
    channels: (usize, usize),
    stride: usize,
    dilation: usize,
    opts: &GradcheckOptions,
) -> Result<CheckResult> {
    let mut rng = seed::rng(opts.seed, &[7, stride as u64, dilation as u64]);
    let mut block = BasicBlock::<f64>::new("block", channels.0, channels.1, stride, dilation);
    block.init(&mut rng);
    let x = normal(&[2, channels.0, 6, 6], &mut rng);
    let out_hw = (6 + 2 * dilation - 2 * dilation - 1) / stride + 1;
    let r = normal(&[2, channels.1, out_hw, out_hw], &mut rng);
    let params = param_names(|f| block.visit(f));
    let mut tensors = vec![x];
    block.visit(&mut |_, role, t| {
        if role == Role::Param {
            tensors.push(t.clone());
        }
    });
    let mut names = vec!["input".to_string()];
    names.extend(params.iter().cloned());
    let frozen = Default::default();
    check(name, &names, tensors, LAYER_TOLERANCE, opts, &mut |t, grads| {
        let mut k = 1;
        block.visit_mut(&mut |_, role, p| {
            if role == Role::Param {
                *p = t[k].clone();
                k += 1;
            }
        });
        let y = block.forward(&t[0], Mode::Training)?;
        let loss = weighted_sum(&r, &y);
        if !grads {
            block.clear_cache();
            return Ok((loss, vec![]));
        }
        let mut sink = GradSink {
            frozen: &frozen,
            table: Default::default(),
        };
        let gx = block.backward(&r, &mut sink)?;
        let mut out = vec![gx];
        for n in &params {
            out.push(sink.table.remove(n).expect("every block parameter has a gradient"));
        }
        Ok((loss, out))
    })
}

/// Reduced-width configuration used by the whole-model checks.
pub fn reduced_config(kind: ModelKind) -> ModelConfig {
    let side = match kind {
        ModelKind::Proposed => 16,
        ModelKind::LightResnet => 48,
    };
    ModelConfig {
        input_size: (side, side),
        stem_channels: [3, 3, 4],
        module_channels: [4, 4, 6],
        ..ModelConfig::paper()
    }
}

fn model_check(kind: ModelKind, opts: &GradcheckOptions) -> Result<CheckResult> {
    let config = reduced_config(kind);
    let mut model = ModelGraph::<f64>::build(kind, &config, opts.seed)?;
    let mut rng = seed::rng(opts.seed, &[8, kind as u64]);
    let (h, w) = config.input_size;
    let x = normal(&[2, 3, h, w], &mut rng).map(|v| 0.5 + 0.25 * v);
    let labels = [1usize, 3];
    let names = model.param_names();
    let tensors: Vec<Tensor<f64>> = names.iter().map(|n| model.tensor(n).expect("named tensor")).collect();
    let label = format!("whole model ({kind})");
    check(&label, &names, tensors, MODEL_TOLERANCE, opts, &mut |t, grads| {
        let mut k = 0;
        model.visit_mut(&mut |_, role, p| {
            if role == Role::Param {
                *p = t[k].clone();
                k += 1;
            }
        });
        let logits = model.forward(&x, Mode::Training)?;
        let (loss, g) = softmax_cross_entropy(&logits, &labels)?;
        if !grads {
            model.clear_cache();
            return Ok((loss, vec![]));
        }
        let mut table = model.backward(&g)?;
        Ok((loss, names.iter().map(|n| table.remove(n).expect("gradient for every parameter")).collect()))
    })
}

/// Runs every layer check and, unless disabled, both whole-model checks.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut checks = vec![
        conv_check("conv 3x3 s1 p1", ConvGeometry::new(3, 1, 1, 1), false, opts)?,
        conv_check("conv 3x3 s2 p1 bias", ConvGeometry::new(3, 2, 1, 1), true, opts)?,
        conv_check("conv 3x3 s1 p2 d2", ConvGeometry::new(3, 1, 2, 2), false, opts)?,
        conv_check("conv 1x1 s2", ConvGeometry::new(1, 2, 0, 1), false, opts)?,
        batchnorm_check(Mode::Training, opts)?,
        batchnorm_check(Mode::Inference, opts)?,
        relu_check(opts)?,
        adaptive_pool_check(opts)?,
        avg_pool_check(opts)?,
        cross_entropy_check(opts)?,
        block_check("basic block (identity)", (3, 3), 1, 1, opts)?,
        block_check("basic block (projection s2)", (2, 3), 2, 1, opts)?,
        block_check("basic block (dilated d2)", (3, 3), 1, 2, opts)?,
    ];
    if opts.include_models {
        checks.push(model_check(ModelKind::Proposed, opts)?);
        checks.push(model_check(ModelKind::LightResnet, opts)?);
    }
    Ok(GradcheckReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(0.0, 1e-9), 1e-3);
    }

    #[test]
    fn layer_checks_pass() {
        let report = run_gradcheck(&GradcheckOptions {
            include_models: false,
            ..Default::default()
        })
        .unwrap();
        assert!(report.passed(), "{}", report.table());
    }

    #[test]
    fn corrupted_conv_fails_only_conv_checks() {
        let report = run_gradcheck(&GradcheckOptions {
            include_models: false,
            corrupt_conv_backward: true,
            ..Default::default()
        })
        .unwrap();
        for c in &report.checks {
            assert_eq!(c.passed, !c.name.starts_with("conv"), "{}", report.table());
        }
    }
}
