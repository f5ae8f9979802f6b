//! PCGrad gradient surgery.

use rand::seq::SliceRandom;
use rand::Rng;

use super::dot;
use crate::error::{dim_err, MtoError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcGradOutput {
    pub surgered: Vec<Vec<f64>>,
    pub combined: Vec<f64>,
}

/// Projects each task gradient off the normal plane of every conflicting
/// original gradient, visiting the others in an `rng`-shuffled order.
pub fn pcgrad<R: Rng + ?Sized>(grads: &[Vec<f64>], rng: &mut R) -> Result<PcGradOutput> {
    let n = grads.len();
    if n < 2 {
        return Err(MtoError::Contract("pcgrad needs >= 2 tasks".into()));
    }
    let d = grads[0].len();
    if grads.iter().any(|g| g.len() != d) {
        return Err(dim_err("pcgrad", "gradients differ in length"));
    }
    let norms_sq: Vec<f64> = grads.iter().map(|g| dot(g, g)).collect();
    let mut surgered = Vec::with_capacity(n);
    for i in 0..n {
        let mut gi = grads[i].clone();
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.shuffle(rng);
        for j in order {
            if norms_sq[j] == 0.0 {
                continue;
            }
            let proj = dot(&gi, &grads[j]);
            if proj < 0.0 {
                let f = proj / norms_sq[j];
                gi.iter_mut().zip(&grads[j]).for_each(|(x, y)| *x -= f * y);
            }
        }
        surgered.push(gi);
    }
    let combined = super::combine(&surgered, &vec![1.0; n]);
    Ok(PcGradOutput { surgered, combined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn no_conflict_unchanged() {
        let g = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = pcgrad(&g, &mut rng()).unwrap();
        assert_eq!(out.surgered, g);
        assert_eq!(out.combined, vec![1.0, 1.0]);
    }

    #[test]
    fn conflicting_pair_projected() {
        let g = vec![vec![1.0, 0.0], vec![-1.0, 1.0]];
        let out = pcgrad(&g, &mut rng()).unwrap();
        assert_eq!(out.surgered[0], vec![0.5, 0.5]);
        assert!(dot(&out.surgered[0], &g[1]).abs() < 1e-15);
    }

    #[test]
    fn anti_parallel_cancels() {
        let g = vec![vec![2.0, -1.0], vec![-2.0, 1.0]];
        let out = pcgrad(&g, &mut rng()).unwrap();
        assert_eq!(out.surgered[0], vec![0.0, 0.0]);
        assert_eq!(out.surgered[1], vec![0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_skipped() {
        let g = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let out = pcgrad(&g, &mut rng()).unwrap();
        assert_eq!(out.surgered[0], g[0]);
    }

    #[test]
    fn needs_two_tasks() {
        assert!(pcgrad(&[vec![1.0]], &mut rng()).is_err());
    }
}
