mod common;

use common::{auc_quadratic, bargaining_oracle, combine, dot, norm, well_conditioned_columns};
use proptest::prelude::*;
use pubmto::analysis::{auc, chi_square_2x2, diff_metric, pairwise_indicators, t_test_independent, ExperimentSummary};
use pubmto::solvers::{pcgrad, solve_bargaining, solve_min_norm, GramMatrix, GramSource, SolveStatus, SolverConfig};
use pubmto::umm::{apply_umm, UmmConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn columns() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..5, 4usize..24, any::<u64>())
        .prop_map(|(n, d, seed)| well_conditioned_columns(&mut ChaCha8Rng::seed_from_u64(seed), n, d))
}

/// The trace-scaled ridge is not column-scale covariant, so it is off here.
fn tight() -> SolverConfig {
    SolverConfig {
        tol: 1e-9,
        ridge_rel: 0.0,
        ..SolverConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_update_ignores_column_scale(cols in columns(), scales in prop::collection::vec(0.05f64..20.0, 4)) {
        let g = GramMatrix::from_columns(&cols, GramSource::Updates).unwrap();
        let a = solve_bargaining(&g, &tight()).unwrap();
        prop_assume!(a.status == SolveStatus::Converged);
        let scaled: Vec<Vec<f64>> = cols
            .iter()
            .zip(&scales)
            .map(|(c, s)| c.iter().map(|x| x * s).collect())
            .collect();
        let gs = GramMatrix::from_columns(&scaled, GramSource::Updates).unwrap();
        let b = solve_bargaining(&gs, &tight()).unwrap();
        prop_assume!(b.status == SolveStatus::Converged);
        let (u, v) = (combine(&cols, &a.alpha), combine(&scaled, &b.alpha));
        let diff: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x - y).collect();
        prop_assert!(norm(&diff) <= 1e-6 * norm(&u), "{} vs {}", norm(&diff), norm(&u));
        for ((bi, si), ai) in b.alpha.iter().zip(&scales).zip(&a.alpha) {
            prop_assert!(((bi * si - ai) / ai).abs() < 1e-6);
        }
    }

    #[test]
    fn bargaining_matches_newton_and_utilities_positive(cols in columns()) {
        let g = GramMatrix::from_columns(&cols, GramSource::Updates).unwrap();
        let sol = solve_bargaining(&g, &SolverConfig::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Converged);
        prop_assert!(sol.residual <= 1e-3);
        let joint = combine(&cols, &sol.alpha);
        for c in &cols {
            prop_assert!(dot(c, &joint) > 0.0);
        }
        let g_ridge = GramMatrix::new(
            g.n(),
            g.as_slice()
                .iter()
                .enumerate()
                .map(|(k, x)| if k % (g.n() + 1) == 0 { x + sol.ridge } else { *x })
                .collect(),
            GramSource::Updates,
        )
        .unwrap();
        for (a, r) in sol.alpha.iter().zip(bargaining_oracle(&g_ridge)) {
            prop_assert!(((a - r) / r).abs() < 1e-3);
        }
    }

    #[test]
    fn min_norm_on_simplex_and_below_inputs(cols in columns()) {
        let sol = solve_min_norm(&cols).unwrap();
        prop_assert!((sol.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(sol.alpha.iter().all(|&a| a >= -1e-9));
        let m = cols.iter().map(|c| norm(c)).fold(f64::INFINITY, f64::min);
        prop_assert!(norm(&combine(&cols, &sol.alpha)) <= m + 1e-9);
    }

    #[test]
    fn pcgrad_pair_removes_conflict(a in prop::collection::vec(-3.0f64..3.0, 6), b in prop::collection::vec(-3.0f64..3.0, 6)) {
        let grads = vec![a, b];
        let out = pcgrad(&grads, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        if dot(&grads[0], &grads[1]) < 0.0 {
            prop_assert!(dot(&out.surgered[0], &grads[1]) >= -1e-9);
            prop_assert!(dot(&out.surgered[1], &grads[0]) >= -1e-9);
        } else {
            prop_assert_eq!(&out.surgered, &grads);
        }
    }

    #[test]
    fn clippy_bounds_every_coordinate(
        col in prop::collection::vec(-5.0f64..5.0, 1..30),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = col.iter().map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let cfg = UmmConfig::Clippy { sigma_rel: 0.5, sigma_abs: 1e-3 };
        let out = apply_umm(&col, &theta, &cfg).unwrap();
        for ((o, t), c) in out.iter().zip(&theta).zip(&col) {
            prop_assert!(o.abs() <= 0.5 * t.abs() + 1e-3 + 1e-12);
            prop_assert!(o * c >= 0.0);
        }
        let lambda: Vec<f64> = out.iter().zip(&col).filter(|(_, c)| **c != 0.0).map(|(o, c)| o / c).collect();
        for w in lambda.windows(2) {
            prop_assert!((w[0] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_matches_pair_counting(
        scores in prop::collection::vec(0u8..6, 2..80),
        labels in prop::collection::vec(any::<bool>(), 80),
    ) {
        let s: Vec<f64> = scores.iter().map(|&x| f64::from(x) / 5.0).collect();
        let mut y: Vec<f64> = labels[..s.len()].iter().map(|&b| f64::from(b)).collect();
        y[0] = 0.0;
        y[1] = 1.0;
        prop_assert_eq!(auc(&s, &y).unwrap(), auc_quadratic(&s, &y));
    }

    #[test]
    fn diff_symmetric(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let (x, y) = (diff_metric(a, b), diff_metric(b, a));
        prop_assert!(x == y || (x.is_nan() && y.is_nan()));
    }

    #[test]
    fn tests_swap_invariant(
        a in prop::collection::vec(-10.0f64..10.0, 3..12),
        b in prop::collection::vec(-10.0f64..10.0, 3..12),
        t in prop::array::uniform4(1u32..50),
    ) {
        let (x, y) = (t_test_independent(&a, &b).unwrap(), t_test_independent(&b, &a).unwrap());
        prop_assert!((x.t + y.t).abs() < 1e-12);
        prop_assert_eq!(x.p_bucket, y.p_bucket);
        let table = [[f64::from(t[0]), f64::from(t[1])], [f64::from(t[2]), f64::from(t[3])]];
        let swapped = [table[1], table[0]];
        let (c1, c2) = (chi_square_2x2(table).unwrap(), chi_square_2x2(swapped).unwrap());
        prop_assert!((c1.chi2 - c2.chi2).abs() < 1e-9 * (1.0 + c1.chi2));
    }

    #[test]
    fn pairs_antisymmetric(aucs in prop::collection::vec(0.5f64..0.9, 3), diffs in prop::collection::vec(0.0f64..1.0, 3)) {
        let runs: Vec<ExperimentSummary> = (0..3)
            .map(|k| ExperimentSummary {
                dataset_id: "d".into(),
                model_kind: "mmoe".into(),
                method: format!("m{k}"),
                seed: 0,
                best_epoch: 1,
                task_aucs: vec![aucs[k]],
                avg_auc: aucs[k],
                mean_sim_task: 0.0,
                mean_sim_share: 0.0,
                diff: Some(diffs[k]),
                steps_used: 1,
            })
            .collect();
        let pw = pairwise_indicators(&runs);
        prop_assert_eq!(pw.pairs.len() + pw.dropped, 6);
        for p in &pw.pairs {
            let back = pw.pairs.iter().find(|q| q.i == p.j && q.j == p.i).unwrap();
            prop_assert_eq!((back.x, back.y), (1 - p.x, 1 - p.y));
        }
    }
}
