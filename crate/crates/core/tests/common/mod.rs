//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use pubmto::solvers::{GramMatrix, GramSource};
use pubmto::tensor::{finite_diff_grad, Tape, Tensor};
use rand::Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn combine(cols: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols[0].len()];
    for (c, a) in cols.iter().zip(w) {
        out.iter_mut().zip(c).for_each(|(o, x)| *o += a * x);
    }
    out
}

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
            .unwrap();
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    x
}

/// Damped Newton on `F(α) = Gα − 1/α`.
pub fn bargaining_oracle(g: &GramMatrix) -> Vec<f64> {
    let n = g.n();
    let mut a = vec![1.0; n];
    for _ in 0..500 {
        let ga = g.mul_vec(&a);
        let f: Vec<f64> = (0..n).map(|i| ga[i] - 1.0 / a[i]).collect();
        if f.iter().map(|x| x.abs()).fold(0.0, f64::max) < 1e-14 {
            break;
        }
        let mut j = g.as_slice().to_vec();
        for i in 0..n {
            j[i * n + i] += 1.0 / (a[i] * a[i]);
        }
        let step = solve_dense(j, f.iter().map(|x| -x).collect());
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

/// Random columns whose Gram matrix has a feasible all-ones start and a
/// smallest-to-largest eigenvalue ratio bounded away from zero.
pub fn well_conditioned_columns<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    loop {
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let scale = rng.random_range(0.5..2.0);
                (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
            })
            .collect();
        let g = GramMatrix::from_columns(&cols, GramSource::Updates).unwrap();
        if g.mul_vec(&vec![1.0; n]).iter().all(|&b| b > 0.05 * g.trace() / n as f64) {
            return cols;
        }
    }
}

/// Pair-counting AUC.
pub fn auc_quadratic(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (si, li) in scores.iter().zip(labels) {
        if *li != 1.0 {
            continue;
        }
        for (sj, lj) in scores.iter().zip(labels) {
            if *lj != 0.0 {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Minimum norm over a simplex grid of step `h` for three vectors.
pub fn min_norm_grid3(v: &[Vec<f64>], h: f64) -> f64 {
    let k = (1.0 / h).round() as usize;
    let mut best = f64::INFINITY;
    for i in 0..=k {
        for j in 0..=k - i {
            let a = [i as f64 * h, j as f64 * h, (k - i - j) as f64 * h];
            best = best.min(norm(&combine(v, &a)));
        }
    }
    best
}

/// Two-task CAGrad dual objective at weight `a` on the first task.
pub fn cagrad_dual2(g: &[Vec<f64>], c: f64, a: f64) -> f64 {
    let g0 = combine(g, &[0.5, 0.5]);
    let gw = combine(g, &[a, 1.0 - a]);
    dot(&gw, &g0) + c * norm(&g0) * norm(&gw)
}

/// Smallest two-task dual objective on a grid of step `h`.
pub fn cagrad_dual2_grid_min(g: &[Vec<f64>], c: f64, h: f64) -> f64 {
    let k = (1.0 / h).round() as usize;
    (0..=k).map(|i| cagrad_dual2(g, c, i as f64 * h)).fold(f64::INFINITY, f64::min)
}

/// CAGrad direction from a brute-force scan of the two-task dual.
pub fn cagrad_grid2(g: &[Vec<f64>], c: f64, h: f64) -> Vec<f64> {
    let g0 = combine(g, &[0.5, 0.5]);
    let g0n = norm(&g0);
    let k = (1.0 / h).round() as usize;
    let mut best = (f64::INFINITY, vec![]);
    for i in 0..=k {
        let a = i as f64 * h;
        let gw = combine(g, &[a, 1.0 - a]);
        let obj = dot(&gw, &g0) + c * g0n * norm(&gw);
        if obj < best.0 {
            best = (obj, gw);
        }
    }
    let gw = best.1;
    let f = c * g0n / norm(&gw);
    g0.iter().zip(&gw).map(|(a, b)| a + f * b).collect()
}

/// Random MLP `x → tanh-free relu/sigmoid layers → bce`. Returns the largest
/// relative error between tape gradients and central differences.
pub fn mlp_gradient_error<R: Rng>(rng: &mut R) -> f64 {
    let batch = rng.random_range(2..5);
    let dims: Vec<usize> = (0..rng.random_range(2..4)).map(|_| rng.random_range(2..5)).collect();
    let mut sizes = dims.clone();
    sizes.push(1);
    let x = Tensor::new(
        vec![batch, sizes[0]],
        (0..batch * sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let y = Tensor::new(
        vec![batch, 1],
        (0..batch).map(|_| f64::from(rng.random_bool(0.5))).collect(),
    )
    .unwrap();
    let mut params = Vec::new();
    for w in sizes.windows(2) {
        params.push(
            Tensor::new(vec![w[0], w[1]], (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap(),
        );
        params.push(Tensor::new(vec![1, w[1]], (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap());
    }
    let layers = params.len() / 2;
    let forward = |tape: &mut Tape, ps: &[pubmto::tensor::Var]| {
        let mut h = tape.constant(&x);
        for l in 0..layers {
            h = tape.matmul(h, ps[2 * l]).unwrap();
            h = tape.add(h, ps[2 * l + 1]).unwrap();
            if l + 1 < layers {
                h = if l % 2 == 0 { tape.sigmoid(h) } else { tape.relu(h) };
            }
        }
        let t = tape.constant(&y);
        tape.bce_with_logits(h, t).unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = forward(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let fd = finite_diff_grad(
        |ps| {
            let mut t = Tape::new();
            let v: Vec<_> = ps.iter().map(|p| t.leaf(p)).collect();
            let l = forward(&mut t, &v);
            t.value(l)[0]
        },
        &params,
        1e-5,
    );
    let mut worst = 0.0_f64;
    for (v, f) in vars.iter().zip(&fd) {
        let g = grads.get_or_zeros(*v, f.len());
        let diff: Vec<f64> = g.iter().zip(f).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(f).max(norm(&g)).max(1e-8));
    }
    worst
}
