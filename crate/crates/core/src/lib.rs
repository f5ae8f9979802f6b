//! Multi-task optimization toolkit built around parameter update balancing:
//! per-task optimizer updates on shared parameters are combined with weights
//! solving `DᵀDα = 1/α`, next to gradient- and loss-balancing baselines,
//! small multi-task ranking models, and a gradient-vs-update diagnostic
//! pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod optim;
pub mod par;
pub mod solvers;
pub mod tensor;
pub mod umm;

pub use error::{MtoError, Result};
