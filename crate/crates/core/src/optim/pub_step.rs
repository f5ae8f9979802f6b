use serde::{Deserialize, Serialize};

use super::{compute_task_updates, plain_step, MomentTiming, OptimizerState};
use crate::error::{dim_err, MtoError, Result};
use crate::models::{FlatGrads, ParamSet};
use crate::solvers::{combine, solve_bargaining, GramMatrix, GramSource, SolverConfig, WeightSolution};
use crate::umm::{Umm, UmmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PubStepConfig {
    pub solve_every: usize,
    pub solver: SolverConfig,
    pub umm: UmmConfig,
    /// Multiply η by `√(P/n)` (P shared parameters, n tasks) so the joint step
    /// has the per-coordinate size of a plain adaptive step. Ignored with
    /// `MomentTiming::BeforeUpdate`.
    pub dim_scaled: bool,
}

impl Default for PubStepConfig {
    fn default() -> Self {
        Self {
            solve_every: 1,
            solver: SolverConfig::default(),
            umm: UmmConfig::Identity,
            dim_scaled: false,
        }
    }
}

impl PubStepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.solve_every == 0 {
            return Err(MtoError::Config("solve_every must be >= 1".into()));
        }
        self.solver.validate()?;
        self.umm.validate()
    }
}

/// What one balancing step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub solution: WeightSolution,
    /// False when the cached weights were reused.
    pub solved: bool,
    /// UMM-transformed per-task update columns (η-free).
    pub columns: Vec<Vec<f64>>,
    /// `Dα`, before scaling by η.
    pub joint_update: Vec<f64>,
    /// `ḡ = Σ α_i g_i`, the gradient the shared moments absorbed.
    pub combined_grad: Vec<f64>,
}

/// Drives update-balanced steps and carries the cached weights and UMM state
/// between them.
#[derive(Debug, Clone)]
pub struct PubStepper {
    config: PubStepConfig,
    umm: Umm,
    cached: Option<WeightSolution>,
}

impl PubStepper {
    pub fn new(config: PubStepConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            umm: Umm::new(config.umm)?,
            cached: None,
        })
    }

    pub fn config(&self) -> &PubStepConfig {
        &self.config
    }

    pub fn cached_alpha(&self) -> Option<&[f64]> {
        self.cached.as_ref().map(|s| s.alpha.as_slice())
    }

    pub fn umm(&self) -> &Umm {
        &self.umm
    }

    /// One step: `grads[i]` holds the gradients of task loss `i` over the whole
    /// partition. Only `grads[i].per_task[i]` is used for task `i`'s head.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        state: &mut OptimizerState,
        grads: &[FlatGrads],
    ) -> Result<StepOutcome> {
        let n = params.task_count();
        if grads.len() != n || state.per_task.len() != n {
            return Err(dim_err(
                "pub_step",
                format!(
                    "{n} tasks, {} gradient sets, {} task moment groups",
                    grads.len(),
                    state.per_task.len()
                ),
            ));
        }
        let task_grads: Vec<Vec<f64>> = grads.iter().map(|g| g.shared.clone()).collect();
        let base = compute_task_updates(state, &task_grads)?;
        let mut theta = params.flatten_shared();
        let mut columns = Vec::with_capacity(n);
        for (i, (col, g)) in base.iter().zip(&task_grads).enumerate() {
            columns.push(self.umm.column(i, col, g, &theta)?);
        }

        let due = state.step_count.is_multiple_of(self.config.solve_every as u64);
        let (solution, solved) = match (&self.cached, due) {
            (Some(c), false) => (c.clone(), false),
            _ => {
                let gram = GramMatrix::from_columns(&columns, GramSource::Updates)?;
                let sol = solve_bargaining(&gram, &self.config.solver)?;
                self.cached = Some(sol.clone());
                (sol, true)
            }
        };
        let alpha = &solution.alpha;
        let joint_update = combine(&columns, alpha);
        let combined_grad = combine(&task_grads, alpha);
        let cfg = state.config;
        let t = state.step_count + 1;

        match cfg.moment_timing {
            MomentTiming::AfterUpdate => {
                let eta = if self.config.dim_scaled {
                    cfg.lr * (theta.len() as f64 / n as f64).sqrt()
                } else {
                    cfg.lr
                };
                theta
                    .iter_mut()
                    .zip(&joint_update)
                    .for_each(|(p, d)| *p -= eta * d);
                state.shared.absorb(&cfg, &combined_grad);
            }
            MomentTiming::BeforeUpdate => {
                plain_step(&mut theta, &mut state.shared, &cfg, &combined_grad, t)?;
            }
        }
        params.set_shared_flat(&theta)?;

        for (task, g) in grads.iter().enumerate() {
            let head_grad = g.per_task.get(task).ok_or_else(|| {
                dim_err("pub_step", format!("gradient set {task} lacks its task group"))
            })?;
            let mut head = params.flatten_task(task);
            plain_step(&mut head, &mut state.per_task[task], &cfg, head_grad, t)?;
            params.set_task_flat(task, &head)?;
        }
        state.step_count += 1;

        Ok(StepOutcome {
            solution,
            solved,
            columns,
            joint_update,
            combined_grad,
        })
    }
}

/// Single balanced step with a caller-owned stepper.
pub fn pub_step(
    params: &mut ParamSet,
    state: &mut OptimizerState,
    grads: &[FlatGrads],
    stepper: &mut PubStepper,
) -> Result<StepOutcome> {
    stepper.step(params, state, grads)
}
