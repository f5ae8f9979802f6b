//! Homoscedastic uncertainty weighting with per-task log-variances `s`.

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyOutput {
    /// `Σ exp(−s_i)·L_i + s_i`
    pub loss: f64,
    /// `exp(−s_i)`, the effective weight on task `i`'s gradient.
    pub weights: Vec<f64>,
    /// `∂loss/∂s_i = −exp(−s_i)·L_i + 1`
    pub grad_log_vars: Vec<f64>,
}

pub fn uncertainty_weights(log_vars: &[f64], losses: &[f64]) -> UncertaintyOutput {
    debug_assert_eq!(log_vars.len(), losses.len());
    let weights: Vec<f64> = log_vars.iter().map(|s| (-s).exp()).collect();
    let loss = weights
        .iter()
        .zip(losses)
        .zip(log_vars)
        .map(|((w, l), s)| w * l + s)
        .sum();
    let grad_log_vars = weights.iter().zip(losses).map(|(w, l)| 1.0 - w * l).collect();
    UncertaintyOutput {
        loss,
        weights,
        grad_log_vars,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, Tensor};

    #[test]
    fn zero_log_vars_is_plain_sum() {
        let out = uncertainty_weights(&[0.0, 0.0], &[0.7, 1.3]);
        assert_eq!(out.weights, vec![1.0, 1.0]);
        assert!((out.loss - 2.0).abs() < 1e-15);
    }

    #[test]
    fn stationary_when_loss_is_one() {
        let out = uncertainty_weights(&[0.0], &[1.0]);
        assert_eq!(out.grad_log_vars, vec![0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let losses = [0.4, 2.5, 1.1];
        let s = Tensor::vector(vec![0.3, -0.8, 1.2]);
        let out = uncertainty_weights(s.data(), &losses);
        let fd = finite_diff_grad(
            |p| uncertainty_weights(p[0].data(), &losses).loss,
            std::slice::from_ref(&s),
            1e-5,
        );
        for (a, b) in out.grad_log_vars.iter().zip(&fd[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
