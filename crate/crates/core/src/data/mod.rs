//! Deterministic synthetic data: a two-task click / conversion ranking set and
//! a two-bowl quadratic toy whose Pareto front is a known segment.

mod ranking;
mod toy;

pub(crate) use ranking::mix64;
pub use ranking::{gen_ranking, GenReport, RankingDataset, RankingDatasetConfig};
pub use toy::{distance_to_segment, toy_losses, ToyConfig, ToyEval};
