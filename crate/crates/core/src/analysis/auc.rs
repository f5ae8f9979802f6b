use crate::error::{MtoError, Result};

/// Area under the ROC curve as a rank statistic, ties counted one half.
///
/// Runs in O(k log k). Labels must be 0 or 1 (`> 0.5` is positive).
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(crate::error::dim_err(
            "auc",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let (mut pos, mut neg) = (0u64, 0u64);
    // Twice the concordant count plus the tie count, kept integral.
    let mut twice_wins = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] > 0.5 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        twice_wins += 2 * p * neg + p * q;
        pos += p;
        neg += q;
        i = j;
    }
    if pos == 0 || neg == 0 {
        return Err(MtoError::Undefined("AUC needs both classes".into()));
    }
    Ok(twice_wins as f64 / (2 * pos * neg) as f64)
}
