use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::engine::MethodEngine;
use crate::data::{distance_to_segment, toy_losses};
use crate::error::{MtoError, Result};
use crate::models::{FlatGrads, NamedTensor, ParamSet};
use crate::optim::OptimizerState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyPoint {
    pub step: usize,
    pub theta: [f64; 2],
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrajectory {
    pub init: [f64; 2],
    /// Step 0 is the initial point.
    pub points: Vec<ToyPoint>,
    /// Distance of the last point to the segment between the two minima.
    pub final_distance: f64,
}

impl ToyTrajectory {
    pub fn last(&self) -> [f64; 2] {
        self.points.last().map_or(self.init, |p| p.theta)
    }
}

/// Runs the configured method and optimizer from every toy init point;
/// writes `trajectory_<k>.csv` under `out` when given.
pub fn run_toy(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<ToyTrajectory>> {
    cfg.validate()?;
    let toy = cfg.toy()?;
    let mut result = Vec::with_capacity(toy.init_points.len());
    for (k, &init) in toy.init_points.iter().enumerate() {
        let mut params = ParamSet {
            shared: vec![NamedTensor {
                name: "theta".into(),
                tensor: Tensor::vector(init.to_vec()),
            }],
            per_task: vec![Vec::new(), Vec::new()],
        };
        let mut state = OptimizerState::for_params(cfg.optim, &params)?;
        let mut engine = MethodEngine::new(cfg, 2, k as u64)?;
        let mut points = Vec::with_capacity(toy.steps + 1);
        let mut theta = init;
        for step in 0..=toy.steps {
            let e = toy_losses(theta, toy);
            if !(e.l1.is_finite() && e.l2.is_finite()) {
                return Err(MtoError::Divergence {
                    step: step as u64,
                    detail: format!("toy init {k} left the finite range"),
                });
            }
            points.push(ToyPoint {
                step,
                theta,
                l1: e.l1,
                l2: e.l2,
            });
            if step == toy.steps {
                break;
            }
            let grads = [e.g1, e.g2].map(|g| FlatGrads {
                shared: g.to_vec(),
                per_task: vec![Vec::new(), Vec::new()],
            });
            engine.step(&mut params, &mut state, &grads, &[e.l1, e.l2])?;
            let flat = params.flatten_shared();
            theta = [flat[0], flat[1]];
        }
        let final_distance = distance_to_segment(theta, toy.c1, toy.c2);
        result.push(ToyTrajectory {
            init,
            points,
            final_distance,
        });
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        for (k, tr) in result.iter().enumerate() {
            let mut w = csv::Writer::from_path(dir.join(format!("trajectory_{k}.csv")))?;
            w.write_record(["step", "theta0", "theta1", "l1", "l2"])?;
            for p in &tr.points {
                w.write_record([
                    p.step.to_string(),
                    p.theta[0].to_string(),
                    p.theta[1].to_string(),
                    p.l1.to_string(),
                    p.l2.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(result)
}
