use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, MtoMethod};
use crate::data::mix64;
use crate::error::Result;
use crate::models::{FlatGrads, ParamSet};
use crate::optim::{plain_step, Moments, OptimizerState, PubStepConfig, PubStepper};
use crate::solvers::{
    cagrad_weights, combine, imtl_g, pcgrad, solve_bargaining, solve_min_norm, uncertainty_weights,
    GramMatrix, GramSource, SolverConfig, WeightSolution,
};

/// What a method did on one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub alpha: Vec<f64>,
    pub solved: bool,
    /// Gradient fed to the shared optimizer (for update balancing, `Σ α_i g_i`).
    pub shared_grad: Vec<f64>,
    /// Gradient each task head was stepped with.
    pub head_grads: Vec<Vec<f64>>,
}

/// Per-run method state: cached weights, PCGrad RNG, uncertainty log-variances.
pub struct MethodEngine {
    method: MtoMethod,
    stepper: Option<PubStepper>,
    solver: SolverConfig,
    solve_every: u64,
    cached: Option<WeightSolution>,
    cagrad_c: f64,
    rng: ChaCha8Rng,
    log_vars: Vec<f64>,
    log_var_moments: Option<Moments>,
}

impl MethodEngine {
    pub fn new(cfg: &ExperimentConfig, task_count: usize, seed: u64) -> Result<Self> {
        let stepper = match cfg.mto_method {
            MtoMethod::Pub => Some(PubStepper::new(PubStepConfig {
                solve_every: cfg.solve_every,
                solver: cfg.solver,
                umm: cfg.umm,
                dim_scaled: cfg.pub_dim_scaled,
            })?),
            _ => None,
        };
        Ok(Self {
            method: cfg.mto_method,
            stepper,
            solver: cfg.solver,
            solve_every: cfg.solve_every as u64,
            cached: None,
            cagrad_c: cfg.cagrad_c,
            rng: ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x7063_6772_6164)),
            log_vars: vec![0.0; task_count],
            log_var_moments: (cfg.mto_method == MtoMethod::Uncertainty)
                .then(|| Moments::zeros(cfg.optim.kind, task_count)),
        })
    }

    pub fn method(&self) -> MtoMethod {
        self.method
    }

    pub fn log_vars(&self) -> &[f64] {
        &self.log_vars
    }

    /// One optimizer step given every task's gradients and losses.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        state: &mut OptimizerState,
        grads: &[FlatGrads],
        losses: &[f64],
    ) -> Result<StepInfo> {
        let own_heads = || -> Vec<Vec<f64>> {
            grads
                .iter()
                .enumerate()
                .map(|(t, g)| g.per_task[t].clone())
                .collect()
        };
        if let Some(stepper) = self.stepper.as_mut() {
            let out = stepper.step(params, state, grads)?;
            return Ok(StepInfo {
                alpha: out.solution.alpha,
                solved: out.solved,
                shared_grad: out.combined_grad,
                head_grads: own_heads(),
            });
        }

        let n = grads.len();
        let shared: Vec<Vec<f64>> = grads.iter().map(|g| g.shared.clone()).collect();
        let mut head_grads = own_heads();
        let mut solved = true;
        let (alpha, shared_grad) = match self.method {
            MtoMethod::Ls => {
                let a = vec![1.0; n];
                let g = combine(&shared, &a);
                (a, g)
            }
            MtoMethod::Mgda => {
                let a = solve_min_norm(&shared)?.alpha;
                let g = combine(&shared, &a);
                (a, g)
            }
            MtoMethod::ImtlG => {
                let a = imtl_g(&shared)?.alpha;
                let g = combine(&shared, &a);
                (a, g)
            }
            MtoMethod::Nashmtl => {
                let due = state.step_count.is_multiple_of(self.solve_every);
                let a = match (&self.cached, due) {
                    (Some(c), false) => {
                        solved = false;
                        c.alpha.clone()
                    }
                    _ => {
                        let gram = GramMatrix::from_columns(&shared, GramSource::Gradients)?;
                        let sol = solve_bargaining(&gram, &self.solver)?;
                        let a = sol.alpha.clone();
                        self.cached = Some(sol);
                        a
                    }
                };
                let g = combine(&shared, &a);
                (a, g)
            }
            MtoMethod::Pcgrad => {
                let out = pcgrad(&shared, &mut self.rng)?;
                (vec![1.0; n], out.combined)
            }
            MtoMethod::Cagrad => {
                let gram = GramMatrix::from_columns(&shared, GramSource::Gradients)?;
                let w = cagrad_weights(&gram, self.cagrad_c);
                let g = crate::solvers::cagrad(&shared, self.cagrad_c)?;
                (w, g)
            }
            MtoMethod::Uncertainty => {
                let u = uncertainty_weights(&self.log_vars, losses);
                let g = combine(&shared, &u.weights);
                for (h, w) in head_grads.iter_mut().zip(&u.weights) {
                    h.iter_mut().for_each(|x| *x *= w);
                }
                let cfg = state.config;
                let t = state.step_count + 1;
                if let Some(m) = self.log_var_moments.as_mut() {
                    plain_step(&mut self.log_vars, m, &cfg, &u.grad_log_vars, t)?;
                }
                (u.weights, g)
            }
            MtoMethod::Pub => unreachable!("handled by the stepper"),
        };

        let cfg = state.config;
        let t = state.step_count + 1;
        let mut theta = params.flatten_shared();
        plain_step(&mut theta, &mut state.shared, &cfg, &shared_grad, t)?;
        params.set_shared_flat(&theta)?;
        for (task, hg) in head_grads.iter().enumerate() {
            let mut head = params.flatten_task(task);
            plain_step(&mut head, &mut state.per_task[task], &cfg, hg, t)?;
            params.set_task_flat(task, &head)?;
        }
        state.step_count += 1;
        Ok(StepInfo {
            alpha,
            solved,
            shared_grad,
            head_grads,
        })
    }
}
