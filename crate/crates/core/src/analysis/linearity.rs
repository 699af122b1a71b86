use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dataset::TrajectoryDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LinearityOutcome {
    /// Data carries a single (already pooled) patch per step.
    NotApplicable,
    Checked { max_discrepancy: f64, pairs: usize },
}

/// Largest `|pool(P_{t+K}) - pool(P_t) - mean_i(P_{t+K,i} - P_{t,i})|` over
/// all steps, optionally after mapping every patch through `projection`
/// (`[d x d']`, no bias).
pub fn patch_linearity_check(
    ds: &TrajectoryDataset,
    k: usize,
    projection: Option<&Array2<f64>>,
) -> Result<LinearityOutcome, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::InvalidArgument("K must be >= 1".into()));
    }
    if let Some(w) = projection {
        if w.nrows() != ds.embed_dim {
            return Err(AnalysisError::InvalidArgument(format!(
                "projection has {} rows, embeddings have {} dims",
                w.nrows(),
                ds.embed_dim
            )));
        }
    }
    if ds.patch_count < 2 {
        return Ok(LinearityOutcome::NotApplicable);
    }
    let frame = |e: usize, t: usize| {
        let p = ds.patches_at(e, t);
        match projection {
            Some(w) => p.dot(w),
            None => p,
        }
    };
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for (e, ep) in ds.episodes.iter().enumerate() {
        for t in 0..ep.length.saturating_sub(k) {
            let (a, b) = (frame(e, t), frame(e, t + k));
            let pooled_diff = b.mean_axis(Axis(0)).expect("patches") - a.mean_axis(Axis(0)).expect("patches");
            let patch_diff = (&b - &a).mean_axis(Axis(0)).expect("patches");
            let gap = (&pooled_diff - &patch_diff).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            worst = worst.max(gap);
            pairs += 1;
        }
    }
    Ok(LinearityOutcome::Checked {
        max_discrepancy: worst,
        pairs,
    })
}
