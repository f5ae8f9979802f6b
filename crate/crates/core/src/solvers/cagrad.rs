//! CAGrad: average-gradient descent with a guaranteed minimum decrease rate
//! across tasks.

use super::{GramMatrix, GramSource};
use crate::error::{dim_err, MtoError, Result};

const PGD_ITERS: usize = 500;
const PGD_STEP: f64 = 0.1;

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Dual weights `w` on the simplex minimizing `g_wᵀg₀ + c‖g₀‖‖g_w‖`.
///
/// Projected gradient descent, at most 500 iterations. The step starts at 0.1
/// scaled by the mean squared gradient norm, is halved until the objective
/// drops and doubles after each accepted move.
pub fn cagrad_weights(g: &GramMatrix, c: f64) -> Vec<f64> {
    let n = g.n();
    let scale = (g.trace() / n as f64).max(f64::MIN_POSITIVE);
    let g0_dot: Vec<f64> = g.mul_vec(&vec![1.0 / n as f64; n]);
    let g0_norm = (g0_dot.iter().sum::<f64>() / n as f64).max(0.0).sqrt();
    let objective = |w: &[f64]| {
        let gw = g.mul_vec(w);
        super::dot(w, &g0_dot) + c * g0_norm * super::dot(w, &gw).max(0.0).sqrt()
    };
    let mut w = vec![1.0 / n as f64; n];
    let mut f = objective(&w);
    let mut step = PGD_STEP / scale;
    for _ in 0..PGD_ITERS {
        let gw = g.mul_vec(&w);
        let gw_norm = super::dot(&w, &gw).max(0.0).sqrt();
        let grad: Vec<f64> = (0..n)
            .map(|i| {
                let rate = if gw_norm > 0.0 { gw[i] / gw_norm } else { 0.0 };
                g0_dot[i] + c * g0_norm * rate
            })
            .collect();
        let mut moved = false;
        for _ in 0..30 {
            let trial = project_simplex(
                &w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect::<Vec<_>>(),
            );
            let ft = objective(&trial);
            if ft < f {
                w = trial;
                f = ft;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        step *= 2.0;
    }
    w
}

/// Combined CAGrad direction `g₀ + (c‖g₀‖/‖g_w‖)·g_w`.
pub fn cagrad(grads: &[Vec<f64>], c: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&c) {
        return Err(MtoError::Config(format!("cagrad c must lie in [0, 1), got {c}")));
    }
    let n = grads.len();
    if n == 0 {
        return Err(MtoError::Contract("cagrad needs >= 1 task".into()));
    }
    let d = grads[0].len();
    if grads.iter().any(|g| g.len() != d) {
        return Err(dim_err("cagrad", "gradients differ in length"));
    }
    let g0 = super::combine(grads, &vec![1.0 / n as f64; n]);
    if c == 0.0 {
        return Ok(g0);
    }
    let gram = GramMatrix::from_columns(grads, GramSource::Gradients)?;
    let w = cagrad_weights(&gram, c);
    let gw = super::combine(grads, &w);
    let gw_norm = super::norm(&gw);
    if gw_norm == 0.0 {
        return Ok(g0);
    }
    let f = c * super::norm(&g0) / gw_norm;
    Ok(g0.iter().zip(&gw).map(|(a, b)| a + f * b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_zero_is_mean() {
        let g = vec![vec![1.0, 3.0], vec![-2.0, 0.5]];
        assert_eq!(cagrad(&g, 0.0).unwrap(), vec![-0.5, 1.75]);
    }

    #[test]
    fn identical_gradients_fixed() {
        let g = vec![vec![0.3, -0.7]; 3];
        for c in [0.2, 0.5, 0.9] {
            let out = cagrad(&g, c).unwrap();
            // g0 + c‖g‖·g/‖g‖ = (1 + c)·g
            for (o, x) in out.iter().zip(&g[0]) {
                assert!((o - (1.0 + c) * x).abs() < 1e-12, "{out:?}");
            }
        }
    }

    #[test]
    fn c_out_of_range() {
        let g = vec![vec![1.0], vec![2.0]];
        assert!(matches!(cagrad(&g, 1.0), Err(MtoError::Config(_))));
        assert!(matches!(cagrad(&g, -0.1), Err(MtoError::Config(_))));
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.5]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_simplex(&[2.0, 0.0, -1.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.2, 0.2, 0.2]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }
}
