//! AdaBound: Adam whose per-element step size is clipped between a lower
//! and an upper bound that both converge to a final SGD learning rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{GradTable, ModelGraph, Role};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    AdaBound,
    /// Bounds `[0, inf)`: plain Adam.
    AdamLimit,
    /// Bounds `[lr2, lr2]`: SGD with momentum-averaged gradient.
    SgdLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBoundConfig {
    /// Initial (Adam-phase) learning rate.
    pub lr1: f64,
    /// Final learning rate both bounds converge to.
    pub lr2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bound_mode: BoundMode,
    /// Convergence rate of the bounds; `1 - beta2` when unset.
    #[serde(default)]
    pub bound_rate: Option<f64>,
}

impl Default for AdaBoundConfig {
    fn default() -> Self {
        Self {
            lr1: 1e-3,
            lr2: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            bound_mode: BoundMode::AdaBound,
            bound_rate: None,
        }
    }
}

impl AdaBoundConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr1 > 0.0
            && self.lr2 > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.bound_rate.is_none_or(|r| r > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdaBound config {self:?}")))
        }
    }

    /// `(lower, upper)` step-size bounds at 1-based step `t`.
    pub fn bounds(&self, t: u64) -> (f64, f64) {
        match self.bound_mode {
            BoundMode::AdaBound => match self.bound_rate {
                Some(rate) => bound_schedule_with_rate(t, self.lr2, rate),
                None => bound_schedule(t, self.lr2, self.beta2),
            },
            BoundMode::AdamLimit => (0.0, f64::INFINITY),
            BoundMode::SgdLimit => (self.lr2, self.lr2),
        }
    }
}

/// Dynamic bounds `lr2 * (1 - 1/((1-beta2) t + 1))` and `lr2 * (1 + 1/((1-beta2) t))`.
pub fn bound_schedule(t: u64, lr2: f64, beta2: f64) -> (f64, f64) {
    bound_schedule_with_rate(t, lr2, 1.0 - beta2)
}

/// The same bounds with an explicit convergence rate in place of `1 - beta2`.
pub fn bound_schedule_with_rate(t: u64, lr2: f64, rate: f64) -> (f64, f64) {
    let t = t.max(1) as f64;
    let lower = lr2 * (1.0 - 1.0 / (rate * t + 1.0));
    let upper = lr2 * (1.0 + 1.0 / (rate * t));
    (lower, upper)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Step counter and per-parameter first/second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    /// Number of completed steps; the next step uses `t = steps + 1`.
    pub steps: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T> Default for OptimizerState<T> {
    fn default() -> Self {
        Self {
            steps: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One AdaBound update of a single element slice.
///
/// `t` is the 1-based step index. Bias correction is folded into the step
/// size: `step = lr1 * sqrt(1 - beta2^t) / (1 - beta1^t)`.
pub fn adabound_update<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    config: &AdaBoundConfig,
) {
    let b1 = T::from_f64(config.beta1);
    let b2 = T::from_f64(config.beta2);
    let one = T::one();
    let tf = t as i32;
    let step = T::from_f64(
        config.lr1 * (1.0 - config.beta2.powi(tf)).sqrt() / (1.0 - config.beta1.powi(tf)),
    );
    let eps = T::from_f64(config.epsilon);
    let (lower, upper) = config.bounds(t);
    let (lower, upper) = (T::from_f64(lower), T::from_f64(upper));
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let rate = (step / (v[i].sqrt() + eps)).max(lower).min(upper);
        theta[i] -= rate * m[i];
    }
}

pub struct AdaBound<T> {
    pub config: AdaBoundConfig,
    pub state: OptimizerState<T>,
}

impl<T: Scalar> AdaBound<T> {
    pub fn new(config: AdaBoundConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: OptimizerState::default(),
        })
    }

    /// Updates every named tensor that has a gradient entry. Tensors without
    /// one (frozen parameters, buffers) are left untouched. A non-finite
    /// gradient aborts the step before anything is modified.
    pub fn step_named<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Tensor<T>)>,
        grads: &GradTable<T>,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::Numeric(format!("gradient of {name} is not finite")));
            }
        }
        let mut targets: Vec<(&str, &mut Tensor<T>, &Tensor<T>)> = Vec::new();
        for (name, p) in params {
            if let Some(g) = grads.get(name) {
                p.ensure_same_shape(g)?;
                targets.push((name, p, g));
            }
        }
        let t = self.state.steps + 1;
        for (name, p, g) in targets {
            let moments = self
                .state
                .moments
                .entry(name.to_string())
                .or_insert_with(|| Moments {
                    m: Tensor::zeros(p.shape().to_vec()),
                    v: Tensor::zeros(p.shape().to_vec()),
                });
            adabound_update(
                p.data_mut(),
                g.data(),
                moments.m.data_mut(),
                moments.v.data_mut(),
                t,
                &self.config,
            );
        }
        self.state.steps = t;
        Ok(())
    }

    /// One step over a model's trainable parameters.
    pub fn step(&mut self, model: &mut ModelGraph<T>, grads: &GradTable<T>) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::Numeric(format!("gradient of {name} is not finite")));
            }
        }
        let t = self.state.steps + 1;
        let config = self.config;
        let moments = &mut self.state.moments;
        let mut error = None;
        model.visit_mut(&mut |name, role, p| {
            if role != Role::Param || error.is_some() {
                return;
            }
            let Some(g) = grads.get(name) else { return };
            if let Err(e) = p.ensure_same_shape(g) {
                error = Some(e);
                return;
            }
            let mo = moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.shape().to_vec()),
                v: Tensor::zeros(p.shape().to_vec()),
            });
            adabound_update(p.data_mut(), g.data(), mo.m.data_mut(), mo.v.data_mut(), t, &config);
        });
        if let Some(e) = error {
            return Err(e);
        }
        self.state.steps = t;
        Ok(())
    }
}
