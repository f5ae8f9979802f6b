//! MGDA: the minimum-norm point in the convex hull of the task vectors.

use super::{GramMatrix, GramSource, SolveStatus, WeightSolution};
use crate::error::{dim_err, MtoError, Result};

const FW_MAX_ITER: usize = 100;
const FW_GAP_TOL: f64 = 1e-6;

/// Closed form for two tasks: `γ = clamp(((v₂−v₁)·v₂)/‖v₁−v₂‖², 0, 1)`, `α = (γ, 1−γ)`.
pub fn min_norm_two(g: &GramMatrix) -> Vec<f64> {
    let (g11, g12, g22) = (g.get(0, 0), g.get(0, 1), g.get(1, 1));
    let denom = g11 + g22 - 2.0 * g12;
    let gamma = if denom <= 0.0 {
        0.5
    } else {
        ((g22 - g12) / denom).clamp(0.0, 1.0)
    };
    vec![gamma, 1.0 - gamma]
}

/// Away-step Frank–Wolfe over the simplex with exact line search on `αᵀGα`.
/// Returns the weights and the iterations used.
pub fn min_norm_frank_wolfe(g: &GramMatrix, max_iter: usize, gap_tol: f64) -> (Vec<f64>, usize) {
    let n = g.n();
    let mut alpha = vec![1.0 / n as f64; n];
    let mut ga = g.mul_vec(&alpha);
    for it in 0..max_iter {
        // ∇(αᵀGα) = 2Gα.
        let a_ga = super::dot(&alpha, &ga);
        let s = (0..n).min_by(|&i, &j| ga[i].total_cmp(&ga[j])).expect("n >= 1");
        let v = (0..n)
            .filter(|&i| alpha[i] > 0.0)
            .max_by(|&i, &j| ga[i].total_cmp(&ga[j]))
            .expect("weights sum to 1");
        let gap = 2.0 * (a_ga - ga[s]);
        if gap < gap_tol {
            return (alpha, it);
        }
        // Direction d as (coefficient on e_k, coefficient on α); γ ≤ γ_max.
        let (k, toward, gamma_max) = if a_ga - ga[s] >= ga[v] - a_ga || alpha[v] >= 1.0 {
            (s, true, 1.0)
        } else {
            (v, false, alpha[v] / (1.0 - alpha[v]))
        };
        // toward: d = e_k − α; away: d = α − e_k.
        let sign = if toward { 1.0 } else { -1.0 };
        let d_ga = sign * (ga[k] - a_ga);
        let d_g_d = g.get(k, k) - 2.0 * ga[k] + a_ga;
        let step = if d_g_d <= 0.0 {
            gamma_max
        } else {
            (-d_ga / d_g_d).clamp(0.0, gamma_max)
        };
        for (i, a) in alpha.iter_mut().enumerate() {
            let e = if i == k { 1.0 } else { 0.0 };
            *a += sign * step * (e - *a);
            if *a < 1e-15 {
                *a = 0.0;
            }
        }
        let total: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a /= total);
        ga = g.mul_vec(&alpha);
    }
    (alpha, max_iter)
}

/// Min-norm weights from a Gram matrix.
pub fn solve_min_norm_gram(g: &GramMatrix) -> Result<WeightSolution> {
    let n = g.n();
    if n == 0 {
        return Err(MtoError::Contract("min-norm needs >= 1 vector".into()));
    }
    g.check_finite()?;
    if (0..n).all(|i| g.get(i, i) == 0.0) {
        let mut sol = WeightSolution::exact(vec![1.0 / n as f64; n]);
        sol.degenerate = true;
        return Ok(sol);
    }
    let (alpha, iterations) = match n {
        1 => (vec![1.0], 0),
        2 => (min_norm_two(g), 0),
        _ => min_norm_frank_wolfe(g, FW_MAX_ITER, FW_GAP_TOL),
    };
    let status = if n >= 3 && iterations == FW_MAX_ITER {
        SolveStatus::MaxIter
    } else {
        SolveStatus::Converged
    };
    Ok(WeightSolution {
        alpha,
        residual: 0.0,
        iterations,
        status,
        ridge: 0.0,
        degenerate: false,
    })
}

/// MGDA weights for per-task vectors.
pub fn solve_min_norm(vectors: &[Vec<f64>]) -> Result<WeightSolution> {
    let d = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != d) {
        return Err(dim_err("solve_min_norm", "vectors differ in length"));
    }
    solve_min_norm_gram(&GramMatrix::from_columns(vectors, GramSource::Gradients)?)
}

#[cfg(test)]
mod tests {
    use super::super::{combine, norm};
    use super::*;

    #[test]
    fn orthogonal_unit_vectors() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let sol = solve_min_norm(&v).unwrap();
        assert_eq!(sol.alpha, vec![0.5, 0.5]);
        assert!((norm(&combine(&v, &sol.alpha)) - 0.5_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn shorter_vector_wins() {
        let v = vec![vec![1.0, 0.0], vec![2.0, 0.0]];
        let sol = solve_min_norm(&v).unwrap();
        assert_eq!(sol.alpha, vec![1.0, 0.0]);
        assert_eq!(combine(&v, &sol.alpha), vec![1.0, 0.0]);
    }

    #[test]
    fn identical_vectors() {
        let v = vec![vec![0.3, -1.0], vec![0.3, -1.0]];
        let sol = solve_min_norm(&v).unwrap();
        let c = combine(&v, &sol.alpha);
        assert!((c[0] - 0.3).abs() < 1e-12 && (c[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_is_degenerate_uniform() {
        let sol = solve_min_norm(&[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert!(sol.degenerate);
        assert_eq!(sol.alpha, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn frank_wolfe_agrees_with_closed_form() {
        let v = vec![vec![1.0, 0.2], vec![-0.4, 1.0]];
        let g = GramMatrix::from_columns(&v, GramSource::Gradients).unwrap();
        let closed = min_norm_two(&g);
        let (fw, _) = min_norm_frank_wolfe(&g, 1000, 1e-12);
        for (a, b) in closed.iter().zip(&fw) {
            assert!((a - b).abs() < 1e-6, "{closed:?} vs {fw:?}");
        }
    }

    #[test]
    fn ragged_rejected() {
        assert!(solve_min_norm(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
