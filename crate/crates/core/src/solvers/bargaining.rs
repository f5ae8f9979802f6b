//! Bargaining weights: positive `α` with `Gα = 1/α` elementwise.
//!
//! With `φ_i(α) = log α_i + log (Gα)_i`, the solver runs a concave-convex
//! procedure on
//!
//! ```text
//!     min Σ φ_i(α)   s.t.  φ_i(α) ≥ 0,  α > 0
//! ```
//!
//! Each outer iteration replaces the concave objective by its tangent at the
//! current iterate and keeps the convex feasible set `{φ_i ≥ 0}` exact. The
//! resulting linear-objective subproblem is solved with a log-barrier path
//! and damped Newton steps; backtracking keeps `α > 0` and `Gα > 0`. Every
//! iterate is feasible for the original constraints, so the objective only
//! decreases towards the point where all `φ_i = 0`.

use serde::{Deserialize, Serialize};

use super::{linalg, min_norm::solve_min_norm_gram, GramMatrix, SolveStatus, WeightSolution};
use crate::error::{MtoError, Result};

/// What to return when the all-ones start is infeasible (`(G·1)_i ≤ 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    Ls,
    MinNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub ccp_max_iter: usize,
    /// Newton iterations allowed per barrier stage.
    pub inner_max_iter: usize,
    pub tol: f64,
    pub ridge_rel: f64,
    pub fallback: Fallback,
    /// Rescale the solution so that `Σα = n`.
    pub normalize_sum_n: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            ccp_max_iter: 200,
            inner_max_iter: 50,
            tol: 1e-3,
            ridge_rel: 1e-8,
            fallback: Fallback::Ls,
            normalize_sum_n: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(MtoError::Config("solver tol must be > 0".into()));
        }
        if self.ccp_max_iter == 0 || self.inner_max_iter == 0 {
            return Err(MtoError::Config("solver iteration caps must be >= 1".into()));
        }
        if !(self.ridge_rel >= 0.0) {
            return Err(MtoError::Config("ridge_rel must be >= 0".into()));
        }
        Ok(())
    }
}

/// `max_i |(Gα)_i·α_i − 1|`; infinite when any term is not finite.
pub(crate) fn residual(g: &GramMatrix, alpha: &[f64]) -> f64 {
    g.mul_vec(alpha)
        .iter()
        .zip(alpha)
        .map(|(b, a)| {
            let r = (b * a - 1.0).abs();
            if r.is_finite() { r } else { f64::INFINITY }
        })
        .fold(0.0, f64::max)
}

/// Solves `Gα = 1/α` for positive `α`, starting from the all-ones vector.
pub fn solve_bargaining(g: &GramMatrix, cfg: &SolverConfig) -> Result<WeightSolution> {
    cfg.validate()?;
    let n = g.n();
    if n == 0 {
        return Err(MtoError::Contract("bargaining solve needs >= 1 task".into()));
    }
    g.check_finite()?;
    let ridge = cfg.ridge_rel * g.trace() / n as f64;
    let gr = g.with_ridge(ridge);

    let ones = vec![1.0; n];
    if gr.mul_vec(&ones).iter().any(|&b| !(b > 0.0)) {
        let mut sol = match cfg.fallback {
            Fallback::Ls => WeightSolution::exact(ones),
            Fallback::MinNorm => solve_min_norm_gram(g)?,
        };
        sol.status = SolveStatus::FallbackUsed;
        sol.ridge = ridge;
        return Ok(sol);
    }

    let mut alpha = ones;
    let mut res = residual(&gr, &alpha);
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIter;
    if res <= cfg.tol {
        status = SolveStatus::Converged;
    } else {
        let target_t = (1e4 / cfg.tol).min(1e13);
        for it in 1..=cfg.ccp_max_iter {
            iterations = it;
            let next = ccp_subproblem(&gr, &alpha, target_t, cfg.inner_max_iter);
            let next_res = residual(&gr, &next);
            if !next_res.is_finite() {
                break;
            }
            let moved = next
                .iter()
                .zip(&alpha)
                .map(|(a, b)| (a - b).abs() / b)
                .fold(0.0, f64::max);
            alpha = next;
            res = next_res;
            if res <= cfg.tol {
                status = SolveStatus::Converged;
                break;
            }
            if moved < 1e-15 {
                break;
            }
        }
        if status != SolveStatus::Converged {
            let (polished, steps) = polish(&gr, &alpha, cfg.inner_max_iter * 4);
            iterations += steps;
            let r = residual(&gr, &polished);
            if r < res {
                alpha = polished;
                res = r;
            }
            if res <= cfg.tol {
                status = SolveStatus::Converged;
            }
        }
    }

    if !res.is_finite() || alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        let mut sol = match cfg.fallback {
            Fallback::Ls => WeightSolution::exact(vec![1.0; n]),
            Fallback::MinNorm => solve_min_norm_gram(g)?,
        };
        sol.status = SolveStatus::FallbackUsed;
        sol.ridge = ridge;
        sol.degenerate = true;
        return Ok(sol);
    }

    if cfg.normalize_sum_n {
        let s: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a *= n as f64 / s);
    }
    Ok(WeightSolution {
        alpha,
        residual: res,
        iterations,
        status,
        ridge,
        degenerate: false,
    })
}

struct Barrier<'a> {
    g: &'a GramMatrix,
    /// Tangent of `Σφ_i` at the linearization point.
    c: Vec<f64>,
}

struct Local {
    b: Vec<f64>,
    phi: Vec<f64>,
}

impl Barrier<'_> {
    fn local(&self, alpha: &[f64]) -> Option<Local> {
        if alpha.iter().any(|&a| !(a > 0.0)) {
            return None;
        }
        let b = self.g.mul_vec(alpha);
        if b.iter().any(|&x| !(x > 0.0)) {
            return None;
        }
        let phi: Vec<f64> = alpha.iter().zip(&b).map(|(a, x)| a.ln() + x.ln()).collect();
        if phi.iter().any(|&p| !(p > 0.0)) {
            return None;
        }
        Some(Local { b, phi })
    }

    fn value(&self, t: f64, alpha: &[f64], loc: &Local) -> f64 {
        t * super::dot(&self.c, alpha) - loc.phi.iter().map(|p| p.ln()).sum::<f64>()
    }

    /// Gradient and Hessian of `t·cᵀα − Σ log φ_i(α)`.
    fn derivatives(&self, t: f64, alpha: &[f64], loc: &Local) -> (Vec<f64>, Vec<f64>) {
        let n = alpha.len();
        let mut grad: Vec<f64> = self.c.iter().map(|c| t * c).collect();
        let mut hess = vec![0.0; n * n];
        let mut dphi = vec![0.0; n];
        for i in 0..n {
            let (a, bi, p) = (alpha[i], loc.b[i], loc.phi[i]);
            for (j, d) in dphi.iter_mut().enumerate() {
                *d = self.g.get(i, j) / bi;
            }
            dphi[i] += 1.0 / a;
            for j in 0..n {
                grad[j] -= dphi[j] / p;
            }
            // ∇φ∇φᵀ/φ² − ∇²φ/φ, with ∇²φ_i = −e_ie_iᵀ/α_i² − G_iG_iᵀ/b_i².
            for j in 0..n {
                let gij = self.g.get(i, j) / bi;
                for k in 0..n {
                    let gik = self.g.get(i, k) / bi;
                    hess[j * n + k] += dphi[j] * dphi[k] / (p * p) + gij * gik / p;
                }
            }
            hess[i * n + i] += 1.0 / (a * a * p);
        }
        (grad, hess)
    }
}

/// One concave-convex step: minimizes the tangent model of `Σφ` at `at`
/// over `{φ ≥ 0}` by following the barrier path up to weight `target_t`.
fn ccp_subproblem(g: &GramMatrix, at: &[f64], target_t: f64, newton_cap: usize) -> Vec<f64> {
    let n = at.len();
    let b_at = g.mul_vec(at);
    let c: Vec<f64> = (0..n)
        .map(|j| 1.0 / at[j] + (0..n).map(|i| g.get(i, j) / b_at[i]).sum::<f64>())
        .collect();
    let barrier = Barrier { g, c };

    // Strictly feasible start: scaling α by s raises every φ_i by 2·log s.
    let min_phi = at
        .iter()
        .zip(&b_at)
        .map(|(a, b)| a.ln() + b.ln())
        .fold(f64::INFINITY, f64::min);
    let lift = if min_phi > 1e-9 { 0.0 } else { (1e-3 - min_phi) / 2.0 };
    let mut alpha: Vec<f64> = at.iter().map(|a| a * lift.exp()).collect();

    let mut t = 1.0;
    loop {
        newton_solve(&barrier, t, &mut alpha, newton_cap);
        if t >= target_t {
            break;
        }
        t = (t * 10.0).min(target_t);
    }
    alpha
}

fn newton_solve(barrier: &Barrier<'_>, t: f64, alpha: &mut Vec<f64>, cap: usize) {
    let n = alpha.len();
    let Some(mut loc) = barrier.local(alpha) else {
        return;
    };
    let mut f = barrier.value(t, alpha, &loc);
    for _ in 0..cap {
        let (grad, hess) = barrier.derivatives(t, alpha, &loc);
        let Some(step) = linalg::solve(hess, grad.iter().map(|x| -x).collect(), 1e-300) else {
            return;
        };
        let slope = super::dot(&grad, &step);
        if -slope / 2.0 <= 1e-14 * (1.0 + f.abs()) {
            return;
        }
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..n).map(|i| alpha[i] + s * step[i]).collect();
            if let Some(tl) = barrier.local(&trial) {
                let ft = barrier.value(t, &trial, &tl);
                if ft <= f + 0.25 * s * slope {
                    *alpha = trial;
                    loc = tl;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

/// Damped Newton on the strictly convex `½αᵀGα − Σ log α`, whose stationary
/// point is the bargaining solution. Used when the outer loop stalls.
fn polish(g: &GramMatrix, start: &[f64], cap: usize) -> (Vec<f64>, usize) {
    let n = start.len();
    let value = |a: &[f64]| -> f64 {
        let ga = g.mul_vec(a);
        0.5 * super::dot(a, &ga) - a.iter().map(|x| x.ln()).sum::<f64>()
    };
    let mut a: Vec<f64> = if start.iter().all(|x| x.is_finite() && *x > 0.0) {
        start.to_vec()
    } else {
        vec![1.0; n]
    };
    let mut f = value(&a);
    for k in 0..cap {
        let ga = g.mul_vec(&a);
        let grad: Vec<f64> = (0..n).map(|i| ga[i] - 1.0 / a[i]).collect();
        let mut hess = g.as_slice().to_vec();
        for i in 0..n {
            hess[i * n + i] += 1.0 / (a[i] * a[i]);
        }
        let Some(step) = linalg::solve(hess, grad.iter().map(|x| -x).collect(), 1e-300) else {
            return (a, k);
        };
        let slope = super::dot(&grad, &step);
        if !(slope < 0.0) || -slope / 2.0 <= 1e-16 * (1.0 + f.abs()) {
            return (a, k);
        }
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            let trial: Vec<f64> = (0..n).map(|i| a[i] + s * step[i]).collect();
            if trial.iter().all(|x| *x > 0.0) {
                let ft = value(&trial);
                if ft <= f + 0.25 * s * slope {
                    a = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            return (a, k);
        }
    }
    (a, cap)
}

#[cfg(test)]
mod tests {
    use super::super::GramSource;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gram(n: usize, g: Vec<f64>) -> GramMatrix {
        GramMatrix::new(n, g, GramSource::Updates).unwrap()
    }

    /// Independent route: damped Newton on `F(α) = Gα − 1/α`, the gradient of
    /// the strictly convex `½αᵀGα − Σ log α`.
    fn newton_oracle(g: &GramMatrix) -> Vec<f64> {
        let n = g.n();
        let mut a = vec![1.0; n];
        for _ in 0..200 {
            let ga = g.mul_vec(&a);
            let f: Vec<f64> = (0..n).map(|i| ga[i] - 1.0 / a[i]).collect();
            if f.iter().map(|x| x.abs()).fold(0.0, f64::max) < 1e-14 {
                break;
            }
            let mut j = g.as_slice().to_vec();
            for i in 0..n {
                j[i * n + i] += 1.0 / (a[i] * a[i]);
            }
            let step = linalg::solve(j, f.iter().map(|x| -x).collect(), 1e-300).unwrap();
            let mut s = 1.0;
            while (0..n).any(|i| a[i] + s * step[i] <= 0.0) {
                s *= 0.5;
            }
            for i in 0..n {
                a[i] += s * step[i];
            }
        }
        a
    }

    fn random_feasible_gram(rng: &mut ChaCha8Rng, n: usize) -> GramMatrix {
        loop {
            let d = 3 * n + 2;
            let cols: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let scale = rng.random_range(0.5..2.0);
                    (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
                })
                .collect();
            let g = GramMatrix::from_columns(&cols, GramSource::Updates).unwrap();
            if g.mul_vec(&vec![1.0; n]).iter().all(|&b| b > 0.0) {
                return g;
            }
        }
    }

    #[test]
    fn identity_gives_ones() {
        for n in 1..6 {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                g[i * n + i] = 1.0;
            }
            let sol = solve_bargaining(&gram(n, g), &SolverConfig::default()).unwrap();
            assert_eq!(sol.status, SolveStatus::Converged);
            for a in &sol.alpha {
                assert!((a - 1.0).abs() < 1e-8);
            }
            assert!(sol.residual < 1e-7);
        }
    }

    #[test]
    fn diagonal_closed_form() {
        let sol = solve_bargaining(&gram(2, vec![4.0, 0.0, 0.0, 1.0]), &SolverConfig::default())
            .unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!((sol.alpha[0] - 0.5).abs() < 1e-6, "{:?}", sol.alpha);
        assert!((sol.alpha[1] - 1.0).abs() < 1e-6, "{:?}", sol.alpha);
    }

    #[test]
    fn matches_newton_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let g = random_feasible_gram(&mut rng, 5);
            let sol = solve_bargaining(&g, &SolverConfig::default()).unwrap();
            assert_eq!(sol.status, SolveStatus::Converged);
            assert!(sol.residual < 1e-3);
            let reference = newton_oracle(&g.with_ridge(sol.ridge));
            for (a, r) in sol.alpha.iter().zip(&reference) {
                assert!(((a - r) / r).abs() < 1e-3, "{a} vs {r}");
            }
        }
    }

    #[test]
    fn residual_recomputable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_feasible_gram(&mut rng, 4);
        let sol = solve_bargaining(&g, &SolverConfig::default()).unwrap();
        assert_eq!(residual(&g.with_ridge(sol.ridge), &sol.alpha), sol.residual);
    }

    #[test]
    fn infeasible_start_falls_back() {
        // PSD, but (G·1)_2 = -0.5.
        let g = gram(2, vec![4.0, -1.5, -1.5, 1.0]);
        let sol = solve_bargaining(&g, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::FallbackUsed);
        assert_eq!(sol.alpha, vec![1.0, 1.0]);
        let cfg = SolverConfig {
            fallback: Fallback::MinNorm,
            ..SolverConfig::default()
        };
        let sol = solve_bargaining(&g, &cfg).unwrap();
        assert_eq!(sol.status, SolveStatus::FallbackUsed);
        assert!((sol.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            solve_bargaining(&gram(0, vec![]), &SolverConfig::default()),
            Err(MtoError::Contract(_))
        ));
        assert!(matches!(
            solve_bargaining(&gram(1, vec![f64::NAN]), &SolverConfig::default()),
            Err(MtoError::Numeric(_))
        ));
        let bad = SolverConfig {
            tol: 0.0,
            ..SolverConfig::default()
        };
        assert!(solve_bargaining(&gram(1, vec![1.0]), &bad).is_err());
    }

    #[test]
    fn single_task_is_inverse_norm() {
        let sol = solve_bargaining(&gram(1, vec![9.0]), &SolverConfig::default()).unwrap();
        assert!((sol.alpha[0] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn near_singular_gram_stays_finite() {
        let g = gram(
            2,
            vec![
                0.20399184521930513,
                -0.203991842934973,
                -0.203991842934973,
                0.2039918409950542,
            ],
        );
        let sol = solve_bargaining(&g, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.residual <= 1e-3);
        let reference = newton_oracle(&g.with_ridge(sol.ridge));
        for (a, r) in sol.alpha.iter().zip(&reference) {
            assert!(a.is_finite());
            assert!(((a - r) / r).abs() < 1e-3, "{a} vs {r}");
        }
    }

    #[test]
    fn normalize_sum_n_rescales() {
        let cfg = SolverConfig {
            normalize_sum_n: true,
            ..SolverConfig::default()
        };
        let sol = solve_bargaining(&gram(2, vec![4.0, 0.0, 0.0, 1.0]), &cfg).unwrap();
        assert!((sol.alpha.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}
