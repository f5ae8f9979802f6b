//! Task-weight solvers: the bargaining solve used by update balancing (and,
//! fed a gradient Gram matrix, by NashMTL), plus the gradient-balancing
//! baselines MGDA, PCGrad, CAGrad, IMTL-G and uncertainty weighting.

mod bargaining;
mod cagrad;
mod gram;
mod imtl;
pub(crate) mod linalg;
mod min_norm;
mod pcgrad;
mod uncertainty;

pub use bargaining::{solve_bargaining, Fallback, SolverConfig};
pub use cagrad::{cagrad, cagrad_weights};
pub use gram::{GramMatrix, GramSource};
pub use imtl::imtl_g;
pub use min_norm::{min_norm_frank_wolfe, min_norm_two, solve_min_norm, solve_min_norm_gram};
pub use pcgrad::{pcgrad, PcGradOutput};
pub use uncertainty::{uncertainty_weights, UncertaintyOutput};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    FallbackUsed,
}

/// Task weights returned by a solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub alpha: Vec<f64>,
    /// `max_i |((G + ridge·I)α)_i·α_i − 1|` for the bargaining solver; zero elsewhere.
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Ridge added to the Gram diagonal before solving.
    #[serde(default)]
    pub ridge: f64,
    /// Set when the inputs were degenerate (all-zero vectors, singular system).
    #[serde(default)]
    pub degenerate: bool,
}

impl WeightSolution {
    pub(crate) fn exact(alpha: Vec<f64>) -> Self {
        Self {
            alpha,
            residual: 0.0,
            iterations: 0,
            status: SolveStatus::Converged,
            ridge: 0.0,
            degenerate: false,
        }
    }
}

/// Linear scalarization: every task weighted 1.
pub fn solve_ls(n: usize) -> WeightSolution {
    WeightSolution::exact(vec![1.0; n])
}

/// `Σ α_i v_i` over equal-length vectors.
pub fn combine(vectors: &[Vec<f64>], alpha: &[f64]) -> Vec<f64> {
    let d = vectors.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (v, a) in vectors.iter().zip(alpha) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += a * x;
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
