//! Update-manipulation methods applied to per-task update columns before the
//! weights are solved.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, MtoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UmmConfig {
    #[default]
    Identity,
    /// Rescales the column so its L2 norm is at most `max_norm`.
    L2Clip { max_norm: f64 },
    /// One scalar per column keeps every `|Δθ_j|` under `sigma_rel·|θ_j| + sigma_abs`.
    Clippy { sigma_rel: f64, sigma_abs: f64 },
    /// Rebuilds each column from a task-private squared-gradient accumulator.
    AdaTask { beta: f64, eps: f64 },
}

impl UmmConfig {
    pub fn clippy_default() -> Self {
        UmmConfig::Clippy {
            sigma_rel: 0.5,
            sigma_abs: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UmmConfig::Identity => Ok(()),
            UmmConfig::L2Clip { max_norm } if !(max_norm > 0.0) => {
                Err(MtoError::Config("l2_clip max_norm must be > 0".into()))
            }
            UmmConfig::Clippy {
                sigma_rel,
                sigma_abs,
            } if !(sigma_abs > 0.0) || !(sigma_rel >= 0.0) => Err(MtoError::Config(
                "clippy needs sigma_abs > 0 and sigma_rel >= 0".into(),
            )),
            UmmConfig::AdaTask { beta, eps } if !(0.0..1.0).contains(&beta) || !(eps > 0.0) => {
                Err(MtoError::Config("adatask needs beta in [0, 1) and eps > 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UmmConfig::Identity => "identity",
            UmmConfig::L2Clip { .. } => "l2_clip",
            UmmConfig::Clippy { .. } => "clippy",
            UmmConfig::AdaTask { .. } => "adatask",
        }
    }
}

/// Stateless transform of one update column. AdaTask columns pass through
/// unchanged here; they are built by [`Umm::column`].
pub fn apply_umm(column: &[f64], theta: &[f64], cfg: &UmmConfig) -> Result<Vec<f64>> {
    if column.len() != theta.len() {
        return Err(dim_err(
            "apply_umm",
            format!("column {} vs params {}", column.len(), theta.len()),
        ));
    }
    Ok(match *cfg {
        UmmConfig::Identity | UmmConfig::AdaTask { .. } => column.to_vec(),
        UmmConfig::L2Clip { max_norm } => {
            let norm = column.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= max_norm {
                column.to_vec()
            } else {
                let s = max_norm / norm;
                column.iter().map(|x| x * s).collect()
            }
        }
        UmmConfig::Clippy {
            sigma_rel,
            sigma_abs,
        } => {
            let mut lambda = 1.0_f64;
            for (d, t) in column.iter().zip(theta) {
                if *d != 0.0 {
                    lambda = lambda.min((sigma_rel * t.abs() + sigma_abs) / d.abs());
                }
            }
            column.iter().map(|x| x * lambda).collect()
        }
    })
}

/// A configured UMM together with its per-task state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Umm {
    pub config: UmmConfig,
    accumulators: Vec<Vec<f64>>,
}

impl Umm {
    pub fn new(config: UmmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            accumulators: Vec::new(),
        })
    }

    pub fn accumulator(&self, task: usize) -> Option<&[f64]> {
        self.accumulators.get(task).map(Vec::as_slice)
    }

    /// Final column for `task`: `base` is the shared-moment update, `grad` the
    /// task gradient, `theta` the current shared parameters.
    pub fn column(&mut self, task: usize, base: &[f64], grad: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        match self.config {
            UmmConfig::AdaTask { beta, eps } => {
                if grad.len() != theta.len() {
                    return Err(dim_err(
                        "adatask",
                        format!("gradient {} vs params {}", grad.len(), theta.len()),
                    ));
                }
                if self.accumulators.len() <= task {
                    self.accumulators.resize(task + 1, Vec::new());
                }
                let acc = &mut self.accumulators[task];
                if acc.len() != grad.len() {
                    *acc = vec![0.0; grad.len()];
                }
                Ok(acc
                    .iter_mut()
                    .zip(grad)
                    .map(|(a, &g)| {
                        *a = beta * *a + (1.0 - beta) * g * g;
                        g / (a.sqrt() + eps)
                    })
                    .collect())
            }
            ref cfg => apply_umm(base, theta, cfg),
        }
    }
}
