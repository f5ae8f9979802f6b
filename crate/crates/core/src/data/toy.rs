use serde::{Deserialize, Serialize};

use crate::error::{MtoError, Result};

/// Two quadratic bowls: `L1 = ½‖θ − c1‖²`, `L2 = (κ/2)‖θ − c2‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub c1: [f64; 2],
    pub c2: [f64; 2],
    pub kappa: f64,
    pub init_points: Vec<[f64; 2]>,
    pub steps: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            c1: [-1.0, 0.0],
            c2: [1.0, 0.0],
            kappa: 1000.0,
            init_points: vec![[-1.5, 1.0], [0.0, 1.5], [1.5, 1.0], [-0.5, -1.5], [1.0, -1.0]],
            steps: 2000,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c1 == self.c2 {
            return Err(MtoError::Config("toy centres must differ".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(MtoError::Config("kappa must be > 0".into()));
        }
        if self.init_points.is_empty() {
            return Err(MtoError::Config("toy needs at least one init point".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyEval {
    pub l1: f64,
    pub l2: f64,
    pub g1: [f64; 2],
    pub g2: [f64; 2],
}

pub fn toy_losses(theta: [f64; 2], cfg: &ToyConfig) -> ToyEval {
    let r1 = [theta[0] - cfg.c1[0], theta[1] - cfg.c1[1]];
    let r2 = [theta[0] - cfg.c2[0], theta[1] - cfg.c2[1]];
    ToyEval {
        l1: 0.5 * (r1[0] * r1[0] + r1[1] * r1[1]),
        l2: 0.5 * cfg.kappa * (r2[0] * r2[0] + r2[1] * r2[1]),
        g1: r1,
        g2: [cfg.kappa * r2[0], cfg.kappa * r2[1]],
    }
}

/// Euclidean distance from `p` to the segment `[a, b]`.
pub fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0] - p[0], a[1] + t * ab[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}
