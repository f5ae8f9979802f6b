use serde::{Deserialize, Serialize};

use crate::error::{dim_err, MtoError, Result};

/// What the Gram matrix was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramSource {
    Updates,
    Gradients,
}

/// Symmetric `n×n` matrix of pairwise inner products, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    n: usize,
    g: Vec<f64>,
    pub source: GramSource,
}

impl GramMatrix {
    pub fn new(n: usize, g: Vec<f64>, source: GramSource) -> Result<Self> {
        if g.len() != n * n {
            return Err(dim_err("gram", format!("{n}x{n} needs {} entries, got {}", n * n, g.len())));
        }
        Ok(Self { n, g, source })
    }

    /// `DᵀD` for the columns of `D`.
    pub fn from_columns(columns: &[Vec<f64>], source: GramSource) -> Result<Self> {
        let n = columns.len();
        let d = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != d) {
            return Err(dim_err("gram", "columns differ in length"));
        }
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = super::dot(&columns[i], &columns[j]);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        Ok(Self { n, g, source })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.g
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.g.chunks(self.n).map(|row| super::dot(row, x)).collect()
    }

    /// Congruence `S·G·S` with `S = diag(scales)`.
    pub fn rescaled(&self, scales: &[f64]) -> Self {
        let n = self.n;
        let g = (0..n * n)
            .map(|k| self.g[k] * scales[k / n] * scales[k % n])
            .collect();
        Self { n, g, source: self.source }
    }

    pub(crate) fn with_ridge(&self, ridge: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            out.g[i * self.n + i] += ridge;
        }
        out
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.g.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(MtoError::Numeric("Gram matrix has non-finite entries".into()))
        }
    }

    /// Largest absolute asymmetry `|G_ij − G_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}
