//! Training loops, the experiment grid, the toy trajectory runner and the
//! trace files they emit.

mod config;
mod engine;
mod grid;
mod toy;
mod train;

pub use config::{DatasetSpec, ExperimentConfig, MtoMethod};
pub use engine::{MethodEngine, StepInfo};
pub use grid::{analyze_dir, run_grid, run_grid_with, trace_files, GridCell, GridOutcome, GridSpec};
pub use toy::{run_toy, ToyPoint, ToyTrajectory};
pub use train::{evaluate, run_training, run_training_on, RunResult};
