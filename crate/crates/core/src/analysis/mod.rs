//! Metrics and the gradient-versus-update diagnostic pipeline: cosine
//! alignment, the Diff ratio, pairwise AUC/Diff indicators with a χ² test,
//! Welch t-tests, rank AUC and the relative multi-task improvement Δm.

mod auc;
mod report;
mod stats;

pub use auc::auc;
pub use report::{
    build_report, pairwise_indicators, read_trace, summarize, write_report, AbortRecord, CellFailure,
    EpochRecord, ExperimentSummary, GridReport, IndicatorPair, Pairwise, SimilarityRow, Trace,
    TraceHeader, TraceLine, TraceRecord, TraceWriter, AGGREGATION_NOTE, TRACE_SCHEMA,
};
pub use stats::{chi_square_2x2, t_test_independent, ChiSquare, PBucket, WelchT};

use crate::error::{dim_err, MtoError, Result};

/// `u·v / (‖u‖‖v‖)`, defined as 0 when either norm is below 1e-12.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    let (nu, nv) = (uu.sqrt(), vv.sqrt());
    if nu < 1e-12 || nv < 1e-12 {
        0.0
    } else {
        (uv / (nu * nv)).clamp(-1.0, 1.0)
    }
}

/// `2|a − b| / |a + b|`; `f64::INFINITY` when `a + b = 0`.
pub fn diff_metric(sim_task: f64, sim_share: f64) -> f64 {
    let den = (sim_task + sim_share).abs();
    if den == 0.0 {
        f64::INFINITY
    } else {
        2.0 * (sim_task - sim_share).abs() / den
    }
}

/// Relative improvement over single-task baselines, in percent (negative is
/// better). `method[t][p]`, `stl[t][p]` and `lower_better[t][p]` index task
/// `t`, criterion `p`; per-task averages are averaged over tasks.
pub fn delta_m(method: &[Vec<f64>], stl: &[Vec<f64>], lower_better: &[Vec<bool>]) -> Result<f64> {
    if method.is_empty() || method.len() != stl.len() || method.len() != lower_better.len() {
        return Err(dim_err("delta_m", "task counts differ or are zero".to_string()));
    }
    let mut total = 0.0;
    for ((m, s), lb) in method.iter().zip(stl).zip(lower_better) {
        if m.is_empty() || m.len() != s.len() || m.len() != lb.len() {
            return Err(dim_err("delta_m", "criterion counts differ or are zero".to_string()));
        }
        let mut task = 0.0;
        for ((&mp, &sp), &lower) in m.iter().zip(s).zip(lb) {
            if sp == 0.0 {
                return Err(MtoError::Undefined("single-task metric is zero".into()));
            }
            let sign = if lower { 1.0 } else { -1.0 };
            task += sign * (mp - sp) / sp;
        }
        total += task / m.len() as f64;
    }
    Ok(100.0 * total / method.len() as f64)
}
