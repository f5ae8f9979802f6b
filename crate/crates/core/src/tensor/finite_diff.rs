use super::Tensor;

/// Central-difference gradient of a scalar function of several tensors.
///
/// Returns one flat gradient per input tensor. Used as the test oracle for
/// [`super::Tape::backward`].
pub fn finite_diff_grad<F>(f: F, params: &[Tensor], h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[Tensor]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = vec![0.0; params[p].numel()];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = f(&work);
            work[p].data_mut()[i] = orig - h;
            let minus = f(&work);
            work[p].data_mut()[i] = orig;
            *g = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|p| p[0].data()[0].powi(2), &[Tensor::scalar(3.0)], 1e-4);
        assert!((g[0][0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn product_rule() {
        let g = finite_diff_grad(
            |p| p[0].data()[0] * p[0].data()[1],
            &[Tensor::vector(vec![2.0, 3.0])],
            1e-4,
        );
        assert!((g[0][0] - 3.0).abs() < 1e-6);
        assert!((g[0][1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff_grad(|_| 7.0, &[Tensor::vector(vec![1.0, 2.0, 3.0])], 1e-3);
        assert_eq!(g[0], vec![0.0; 3]);
    }
}
