use ndarray::Axis;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::dataset::TransitionSet;
use crate::probes::{train_final, validation_score, Hyperparams, ProbeKind, TrainConfig};
use crate::rng::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub observed: f64,
    /// Test R² of each shuffled-label refit, by permutation index.
    pub null_r2: Vec<f64>,
    pub p_value: f64,
    pub n_perm: usize,
}

/// `(1 + #{null >= observed}) / (1 + n_perm)`.
pub fn permutation_p_value(observed: f64, null: &[f64]) -> Result<f64, StatsError> {
    if null.is_empty() {
        return Err(StatsError::InvalidArgument("need at least one permutation".into()));
    }
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    Ok((1 + exceed) as f64 / (1 + null.len()) as f64)
}

/// Shuffle the training targets `n_perm` times, refit with the fixed
/// hyperparameters `hp` and score each refit on the untouched test set.
///
/// `observed` is the unshuffled test R²; when `None` it is recomputed with
/// the same recipe.
#[allow(clippy::too_many_arguments)]
pub fn permutation_test(
    kind: ProbeKind,
    train: &TransitionSet,
    val: &TransitionSet,
    test: &TransitionSet,
    hp: &Hyperparams,
    config: &TrainConfig,
    n_perm: usize,
    seed: u64,
    observed: Option<f64>,
) -> Result<PermutationOutcome, StatsError> {
    if n_perm < 1 {
        return Err(StatsError::InvalidArgument("n_perm must be at least 1".into()));
    }
    if test.is_empty() {
        return Err(StatsError::TooFewSamples { need: 1, got: 0 });
    }
    let score = |set: &TransitionSet| -> Result<f64, StatsError> {
        let (probe, _) = train_final(kind, set, val, hp, config)?;
        let pred = probe.predict(test.features.view())?;
        Ok(validation_score(&test.targets, &pred))
    };
    let observed = match observed {
        Some(v) => v,
        None => score(train)?,
    };
    let null_r2 = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, "permutation", i as u64);
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            let shuffled = train.with_targets(train.targets.select(Axis(0), &order));
            score(&shuffled)
        })
        .collect::<Result<Vec<f64>, StatsError>>()?;
    let p_value = permutation_p_value(observed, &null_r2)?;
    Ok(PermutationOutcome {
        observed,
        null_r2,
        p_value,
        n_perm,
    })
}
