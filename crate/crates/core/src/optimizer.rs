//! Stochastic training: minibatch, gradient estimate, Adam or SGD step, record.

use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{DivergenceError, DivergenceSpec};
use crate::estimators::{estimate_gradient, EstimatorError, GradientKind, McConfig, Objective};
use crate::families::{FamilyError, VariationalFamily};
use crate::models::{minibatch_adapter, Conditioned, Dataset, LatentModel, ModelError};
use crate::stats::{l2_norm, mix_seed, stream_rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("step {step}: {source}")]
    Estimator {
        step: usize,
        #[source]
        source: EstimatorError,
    },
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam: AdamHyper,
    pub epochs: usize,
    /// Minibatch size `M`; `None` uses the full dataset every step.
    pub batch_size: Option<usize>,
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    pub gradient: GradientKind,
    pub objective: Objective,
    pub divergence: DivergenceSpec,
    pub tol: f64,
    pub patience: usize,
    pub ema_decay: f64,
    pub clip_norm: f64,
    /// Record `theta` every this many steps (0 keeps only the final snapshot).
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            adam: AdamHyper::default(),
            epochs: 1000,
            batch_size: None,
            k: 100,
            l: 1,
            seed: 0,
            gradient: GradientKind::Reparam,
            objective: Objective::Bound,
            divergence: DivergenceSpec::new("kl_reverse", &[], crate::Direction::Reverse),
            tol: 1e-5,
            patience: 20,
            ema_decay: 0.9,
            clip_norm: 1e3,
            snapshot_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.k == 0 || self.l == 0 {
            return bad("K and L must be at least 1".into());
        }
        if let Some(m) = self.batch_size {
            if m == 0 || m > n {
                return bad(format!("batch size must be in 1..={n}, got {m}"));
            }
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam moments need beta in [0, 1) and eps > 0".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!(
                "ema decay must be in [0, 1), got {}",
                self.ema_decay
            ));
        }
        if !(self.tol >= 0.0) || !(self.clip_norm > 0.0) {
            return bad("tolerance must be >= 0 and clip norm > 0".into());
        }
        if self.l > 1 && self.gradient != GradientKind::IwReparam {
            return bad(format!("L = {} requires the iw_reparam gradient", self.l));
        }
        Ok(())
    }

    fn steps_per_epoch(&self, n: usize) -> usize {
        self.batch_size.map_or(1, |m| n.div_ceil(m))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(p: usize) -> Self {
        AdamState {
            m: vec![0.0; p],
            v: vec![0.0; p],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    hyper: AdamHyper,
    lr: f64,
) {
    assert_eq!(state.m.len(), theta.len(), "adam state has wrong dimension");
    state.t += 1;
    let b1t = 1.0 - hyper.beta1.powi(state.t as i32);
    let b2t = 1.0 - hyper.beta2.powi(state.t as i32);
    for i in 0..theta.len() {
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grad[i];
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
        let mh = state.m[i] / b1t;
        let vh = state.v[i] / b2t;
        theta[i] -= lr * mh / (vh.sqrt() + hyper.eps);
    }
}

pub fn sgd_step(theta: &mut [f64], grad: &[f64], lr: f64) {
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub epoch: usize,
    pub step: usize,
    /// Objective estimate on this step's minibatch and samples.
    pub bound: f64,
    pub ema: f64,
    pub grad_norm: f64,
    pub clipped: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochBudget,
    Converged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: Vec<TraceStep>,
    pub stop_reason: StopReason,
    pub clipped_steps: usize,
    /// Steps whose objective estimate was not finite.
    pub degenerate_steps: usize,
    pub projected_steps: usize,
    /// Excluded from serialization so traces compare bitwise across runs.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl TrainTrace {
    pub fn final_bound(&self) -> Option<f64> {
        self.steps.last().map(|s| s.bound)
    }

    /// One JSON object per step.
    pub fn to_json_lines(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(s).expect("trace steps serialize") + "\n")
            .collect()
    }
}

/// Runs stochastic f-VI from `theta0`, minimizing the configured bound.
pub fn train(
    model: &dyn LatentModel,
    data: &Dataset,
    family: &dyn VariationalFamily,
    theta0: &[f64],
    config: &TrainConfig,
) -> Result<(Vec<f64>, TrainTrace), TrainError> {
    let start = Instant::now();
    let n = data.len();
    config.validate(n)?;
    let g = config.divergence.build()?;
    let dir = config.divergence.direction;
    let mut theta = theta0.to_vec();
    family.project(&mut theta)?;
    let p = family.param_dim();
    if model.latent_dim() != family.latent_dim() {
        return Err(TrainError::Config(format!(
            "model `{}` has {} latents, family `{}` has {}",
            model.name(),
            model.latent_dim(),
            family.name(),
            family.latent_dim()
        )));
    }

    let mut adam = AdamState::new(p);
    let mut batch_rng = stream_rng(mix_seed(config.seed, 0xba7c4), 0);
    let per_epoch = config.steps_per_epoch(n);
    let total = config.epochs * per_epoch;
    let mut trace = TrainTrace {
        steps: Vec::with_capacity(total),
        stop_reason: StopReason::EpochBudget,
        clipped_steps: 0,
        degenerate_steps: 0,
        projected_steps: 0,
        wall_time_s: 0.0,
    };
    let mut ema: Option<f64> = None;
    let mut stalled = 0usize;

    for step in 0..total {
        let batch: Option<Vec<usize>> = config
            .batch_size
            .filter(|&m| m < n)
            .map(|m| sample(&mut batch_rng, n, m).into_vec());
        let view = match &batch {
            Some(b) => minibatch_adapter(model, data, b, n)?,
            None => Conditioned::new(model, data),
        };
        let mc = McConfig::new(config.k, config.l, mix_seed(config.seed, step as u64 + 1));
        let est = estimate_gradient(
            config.gradient,
            config.objective,
            &g,
            dir,
            &view,
            family,
            &theta,
            mc,
        )
        .map_err(|e| match e {
            EstimatorError::NonFinite(detail) => TrainError::NonFinite { step, detail },
            source => TrainError::Estimator { step, source },
        })?;
        let mut grad = est.grad;
        let norm = l2_norm(&grad);
        let clipped = norm > config.clip_norm;
        if clipped {
            let s = config.clip_norm / norm;
            grad.iter_mut().for_each(|v| *v *= s);
            trace.clipped_steps += 1;
        }
        match config.optimizer {
            OptimizerKind::Adam => adam_step(
                &mut theta,
                &grad,
                &mut adam,
                config.adam,
                config.learning_rate,
            ),
            OptimizerKind::Sgd => sgd_step(&mut theta, &grad, config.learning_rate),
        }
        if family.project(&mut theta)? {
            trace.projected_steps += 1;
        }

        let bound = est.objective;
        let mut converged = false;
        if bound.is_finite() {
            let prev = ema;
            let next = match prev {
                Some(e) => config.ema_decay * e + (1.0 - config.ema_decay) * bound,
                None => bound,
            };
            ema = Some(next);
            if let Some(prev) = prev {
                if (next - prev).abs() <= config.tol * prev.abs().max(1e-12) {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                converged = stalled >= config.patience;
            }
        } else {
            trace.degenerate_steps += 1;
        }
        let snapshot = config.snapshot_every > 0 && step % config.snapshot_every == 0;
        trace.steps.push(TraceStep {
            epoch: step / per_epoch,
            step,
            bound,
            ema: ema.unwrap_or(f64::NAN),
            grad_norm: norm,
            clipped,
            theta: snapshot.then(|| theta.clone()),
        });
        if converged {
            trace.stop_reason = StopReason::Converged;
            break;
        }
    }
    if let Some(last) = trace.steps.last_mut() {
        last.theta = Some(theta.clone());
    }
    trace.wall_time_s = start.elapsed().as_secs_f64();
    Ok((theta, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_is_sign_like() {
        let mut th = [1.0];
        let mut st = AdamState::new(1);
        adam_step(&mut th, &[0.37], &mut st, AdamHyper::default(), 0.1);
        let want = 1.0 - 0.1 * 0.37 / (0.37 + 1e-8);
        assert!((th[0] - want).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_theta() {
        let mut th = [0.4, -2.0];
        let mut st = AdamState::new(2);
        for _ in 0..100 {
            adam_step(&mut th, &[0.0, 0.0], &mut st, AdamHyper::default(), 0.1);
        }
        assert_eq!(th, [0.4, -2.0]);
    }

    #[test]
    fn config_validation() {
        let c = TrainConfig::default();
        assert!(c.validate(10).is_ok());
        assert!(TrainConfig {
            batch_size: Some(11),
            ..c.clone()
        }
        .validate(10)
        .is_err());
        assert!(TrainConfig { k: 0, ..c.clone() }.validate(10).is_err());
        assert!(TrainConfig { l: 3, ..c.clone() }.validate(10).is_err());
        assert!(TrainConfig {
            learning_rate: -1.0,
            ..c
        }
        .validate(10)
        .is_err());
    }
}
