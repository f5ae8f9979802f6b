//! Optimizer state machines (SGD, Adam, AdaGrad, RMSProp) without bias
//! correction by default, and the update-balancing step for shared parameters.
//!
//! All update forms follow the same convention: the step direction for a
//! gradient `g` is computed from the moments as they *would* be after
//! absorbing `g`, e.g. for Adam `(β₁m + (1−β₁)g) / (√(β₂v + (1−β₂)g²) + eps)`.
//! AdaGrad uses the same decayed accumulator as RMSProp.

mod pub_step;

pub use pub_step::{pub_step, PubStepConfig, PubStepper, StepOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, MtoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adagrad,
    Rmsprop,
}

/// When shared moments absorb the combined gradient relative to the θ-update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentTiming {
    /// θ moves by `η·Dα` computed from frozen moments, then moments absorb `ḡ`.
    AfterUpdate,
    /// Moments absorb `ḡ` first and θ moves by the optimizer step they imply.
    BeforeUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Accumulator decay for AdaGrad and RMSProp.
    pub beta: f64,
    pub eps: f64,
    pub bias_correct: bool,
    pub moment_timing: MomentTiming,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            beta: 0.9,
            eps: 1e-8,
            bias_correct: false,
            moment_timing: MomentTiming::AfterUpdate,
        }
    }
}

impl OptimConfig {
    pub fn with_kind(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(MtoError::Config("eps must be > 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(MtoError::Config("learning rate must be > 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2), ("beta", self.beta)] {
            if !(0.0..1.0).contains(&b) {
                return Err(MtoError::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Moment buffers for one flat parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Moments {
    Sgd { len: usize },
    Adam { m: Vec<f64>, v: Vec<f64> },
    /// Decayed squared-gradient accumulator (AdaGrad, RMSProp).
    Accum { g: Vec<f64> },
}

impl Moments {
    pub fn zeros(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Moments::Sgd { len },
            OptimizerKind::Adam => Moments::Adam {
                m: vec![0.0; len],
                v: vec![0.0; len],
            },
            OptimizerKind::Adagrad | OptimizerKind::Rmsprop => Moments::Accum { g: vec![0.0; len] },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Moments::Sgd { len } => *len,
            Moments::Adam { m, .. } => m.len(),
            Moments::Accum { g } => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Direction the optimizer would step for gradient `g` given the current
    /// (unchanged) moments. `t` is the 1-based step index for bias correction.
    pub fn direction(&self, cfg: &OptimConfig, g: &[f64], t: u64) -> Vec<f64> {
        match self {
            Moments::Sgd { .. } => g.to_vec(),
            Moments::Adam { m, v } => {
                let (c1, c2) = bias_factors(cfg, t);
                g.iter()
                    .zip(m.iter().zip(v))
                    .map(|(&gi, (&mi, &vi))| {
                        let num = (cfg.beta1 * mi + (1.0 - cfg.beta1) * gi) / c1;
                        let den = ((cfg.beta2 * vi + (1.0 - cfg.beta2) * gi * gi) / c2).sqrt();
                        num / (den + cfg.eps)
                    })
                    .collect()
            }
            Moments::Accum { g: acc } => g
                .iter()
                .zip(acc)
                .map(|(&gi, &ai)| {
                    gi / ((cfg.beta * ai + (1.0 - cfg.beta) * gi * gi).sqrt() + cfg.eps)
                })
                .collect(),
        }
    }

    /// Folds gradient `g` into the moments.
    pub fn absorb(&mut self, cfg: &OptimConfig, g: &[f64]) {
        match self {
            Moments::Sgd { .. } => {}
            Moments::Adam { m, v } => {
                for ((mi, vi), &gi) in m.iter_mut().zip(v.iter_mut()).zip(g) {
                    *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                    *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                }
            }
            Moments::Accum { g: acc } => {
                for (ai, &gi) in acc.iter_mut().zip(g) {
                    *ai = cfg.beta * *ai + (1.0 - cfg.beta) * gi * gi;
                }
            }
        }
    }
}

fn bias_factors(cfg: &OptimConfig, t: u64) -> (f64, f64) {
    if cfg.bias_correct {
        let t = t.max(1) as i32;
        (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
    } else {
        (1.0, 1.0)
    }
}

/// Optimizer state for a partitioned parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimConfig,
    pub shared: Moments,
    pub per_task: Vec<Moments>,
    /// Completed steps.
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(config: OptimConfig, shared_len: usize, task_lens: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            shared: Moments::zeros(config.kind, shared_len),
            per_task: task_lens
                .iter()
                .map(|&l| Moments::zeros(config.kind, l))
                .collect(),
            step_count: 0,
        })
    }

    pub fn for_params(config: OptimConfig, params: &crate::models::ParamSet) -> Result<Self> {
        let lens: Vec<usize> = (0..params.task_count()).map(|t| params.task_len(t)).collect();
        Self::new(config, params.shared_len(), &lens)
    }
}

/// Per-task hypothetical updates on the shared group, one column per task,
/// all computed against the same frozen moments.
pub fn compute_task_updates(state: &OptimizerState, task_grads: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = state.shared.len();
    if let Some(bad) = task_grads.iter().find(|g| g.len() != d) {
        return Err(dim_err(
            "compute_task_updates",
            format!("gradient length {} vs {d} shared parameters", bad.len()),
        ));
    }
    let t = state.step_count + 1;
    Ok(task_grads
        .iter()
        .map(|g| state.shared.direction(&state.config, g, t))
        .collect())
}

/// One ordinary optimizer step on a flat parameter group; returns the applied
/// displacement `θ_old − θ_new`.
pub fn plain_step(
    params: &mut [f64],
    moments: &mut Moments,
    cfg: &OptimConfig,
    grad: &[f64],
    t: u64,
) -> Result<Vec<f64>> {
    if params.len() != grad.len() || moments.len() != grad.len() {
        return Err(dim_err(
            "plain_step",
            format!(
                "params {}, moments {}, grad {}",
                params.len(),
                moments.len(),
                grad.len()
            ),
        ));
    }
    let dir = moments.direction(cfg, grad, t);
    moments.absorb(cfg, grad);
    let delta: Vec<f64> = dir.iter().map(|d| cfg.lr * d).collect();
    params.iter_mut().zip(&delta).for_each(|(p, d)| *p -= d);
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_task_update() {
        let state = OptimizerState::new(OptimConfig::default(), 1, &[]).unwrap();
        let d = compute_task_updates(&state, &[vec![1.0]]).unwrap();
        let expected = 0.1 / (0.001_f64.sqrt() + 1e-8);
        assert!((d[0][0] - expected).abs() < 1e-12);
        assert!((d[0][0] - 3.16227).abs() < 1e-5);
    }

    #[test]
    fn rmsprop_first_task_update() {
        let cfg = OptimConfig::with_kind(OptimizerKind::Rmsprop, 1e-3);
        let state = OptimizerState::new(cfg, 1, &[]).unwrap();
        let d = compute_task_updates(&state, &[vec![1.0]]).unwrap();
        assert!((d[0][0] - 1.0 / (0.1_f64.sqrt() + 1e-8)).abs() < 1e-12);
        assert!((d[0][0] - 3.16226).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_zero_column() {
        let state = OptimizerState::new(OptimConfig::default(), 3, &[]).unwrap();
        let d = compute_task_updates(&state, &[vec![0.0; 3], vec![1.0; 3]]).unwrap();
        assert_eq!(d[0], vec![0.0; 3]);
    }

    #[test]
    fn task_updates_do_not_touch_state() {
        let mut state = OptimizerState::new(OptimConfig::default(), 2, &[]).unwrap();
        state.shared.absorb(&state.config.clone(), &[0.3, -0.2]);
        let before = state.clone();
        compute_task_updates(&state, &[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        assert_eq!(state, before);
    }

    #[test]
    fn sgd_step() {
        let cfg = OptimConfig::with_kind(OptimizerKind::Sgd, 0.1);
        let mut m = Moments::zeros(OptimizerKind::Sgd, 1);
        let mut p = vec![1.0];
        plain_step(&mut p, &mut m, &cfg, &[2.0], 1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_lr_one() {
        let cfg = OptimConfig::with_kind(OptimizerKind::Adam, 1.0);
        let mut m = Moments::zeros(OptimizerKind::Adam, 1);
        let mut p = vec![0.0];
        plain_step(&mut p, &mut m, &cfg, &[1.0], 1).unwrap();
        assert!((p[0] + 3.16227).abs() < 1e-5);
        assert_eq!(
            m,
            Moments::Adam {
                m: vec![1.0 - 0.9],
                v: vec![1.0 - 0.999]
            }
        );
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::Adam,
            OptimizerKind::Adagrad,
            OptimizerKind::Rmsprop,
        ] {
            let cfg = OptimConfig::with_kind(kind, 0.5);
            let mut m = Moments::zeros(kind, 2);
            let mut p = vec![1.0, -1.0];
            plain_step(&mut p, &mut m, &cfg, &[0.0, 0.0], 1).unwrap();
            assert_eq!(p, vec![1.0, -1.0]);
        }
    }

    #[test]
    fn bias_correction_flag() {
        let cfg = OptimConfig {
            bias_correct: true,
            ..OptimConfig::default()
        };
        let m = Moments::zeros(OptimizerKind::Adam, 1);
        // m̂ = g, v̂ = g² at t = 1 → direction ≈ 1.
        let d = m.direction(&cfg, &[2.0], 1);
        assert!((d[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn invalid_config() {
        let cfg = OptimConfig {
            eps: 0.0,
            ..OptimConfig::default()
        };
        assert!(OptimizerState::new(cfg, 1, &[]).is_err());
    }

    #[test]
    fn length_mismatch() {
        let state = OptimizerState::new(OptimConfig::default(), 2, &[]).unwrap();
        assert!(compute_task_updates(&state, &[vec![1.0]]).is_err());
    }
}
