//! IMTL-G: weights making the aggregate gradient project equally onto every
//! unit task gradient.

use super::{linalg, solve_ls, GramMatrix, GramSource, SolveStatus, WeightSolution};
use crate::error::{dim_err, MtoError, Result};

/// Solves the `(n−1)`-dimensional system for `α₂..αₙ` with `α₁ = 1 − Σ_{j≥2} α_j`.
pub fn imtl_g(grads: &[Vec<f64>]) -> Result<WeightSolution> {
    let n = grads.len();
    if n == 0 {
        return Err(MtoError::Contract("imtl_g needs >= 1 task".into()));
    }
    let d = grads[0].len();
    if grads.iter().any(|g| g.len() != d) {
        return Err(dim_err("imtl_g", "gradients differ in length"));
    }
    if n == 1 {
        return Ok(WeightSolution::exact(vec![1.0]));
    }
    let g = GramMatrix::from_columns(grads, GramSource::Gradients)?;
    g.check_finite()?;
    let norms: Vec<f64> = (0..n).map(|i| g.get(i, i).sqrt()).collect();
    if norms.contains(&0.0) {
        return Ok(ls_fallback(n));
    }
    // (g_j · u_i) = G_ji / ‖g_i‖
    let gu = |j: usize, i: usize| g.get(j, i) / norms[i];
    // Row i−1: Σ_j a_j (g_j − g₁)·(u₁ − u_i) = −g₁·(u₁ − u_i), i, j ∈ 2..n.
    let m = n - 1;
    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m];
    for i in 1..n {
        for j in 1..n {
            a[(i - 1) * m + (j - 1)] = (gu(j, 0) - gu(j, i)) - (gu(0, 0) - gu(0, i));
        }
        b[i - 1] = -(gu(0, 0) - gu(0, i));
    }
    let Some(rest) = linalg::solve(a, b, 1e-10) else {
        return Ok(ls_fallback(n));
    };
    let mut alpha = Vec::with_capacity(n);
    alpha.push(1.0 - rest.iter().sum::<f64>());
    alpha.extend(rest);
    Ok(WeightSolution::exact(alpha))
}

fn ls_fallback(n: usize) -> WeightSolution {
    let mut sol = solve_ls(n);
    sol.status = SolveStatus::FallbackUsed;
    sol.degenerate = true;
    sol
}
