use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-6;

/// Maximum softmax probability. Lower values indicate OOD, so callers that
/// want "higher = more OOD" should negate it.
pub fn msp_score(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = probs.iter().sum();
    if !((sum - 1.0).abs() <= NORMALIZATION_TOL) || probs.iter().any(|p| *p < 0.0) {
        return Err(Error::NotNormalized(sum));
    }
    Ok(probs.iter().fold(0.0, |m, &p| m.max(p)))
}

/// Area under the ROC curve with OOD as the positive class:
/// `P(ood > id) + ½·P(ood = id)`, via the Mann-Whitney rank sum with
/// mid-ranks for ties.
pub fn auroc(scores_ood: &[f64], scores_id: &[f64]) -> Result<f64> {
    if scores_ood.is_empty() || scores_id.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores_ood.iter().chain(scores_id).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("auroc scores"));
    }
    let n_pos = scores_ood.len();
    let n_neg = scores_id.len();
    let mut all: Vec<(f64, bool)> = scores_ood
        .iter()
        .map(|&s| (s, true))
        .chain(scores_id.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Ranks are 1-based; a tie block spanning ranks i+1..=j gets (i+1+j)/2.
    // Sums of such mid-ranks are half-integers, exact in f64 at these sizes.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos_in_block = all[i..j].iter().filter(|(_, p)| *p).count();
        rank_sum_pos += mid * pos_in_block as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}
