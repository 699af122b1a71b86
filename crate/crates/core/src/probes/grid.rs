use std::cmp::Ordering;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit_linear_arrays, fit_mlp_arrays, validation_score, FitRequest, Hyperparams, Probe, ProbeError,
    ProbeKind, TrainConfig,
};
use crate::dataset::TransitionSet;
use crate::rng::derive_seed;

/// Hyperparameter axes. `dropouts` is ignored for linear probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lrs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub dropouts: Vec<f64>,
}

impl GridSpec {
    pub fn from_config(config: &TrainConfig) -> Self {
        GridSpec {
            lrs: config.lr_grid.clone(),
            lambdas: config.lambda_grid.clone(),
            dropouts: config.dropout_grid.clone(),
        }
    }

    /// Cells in lr-major, then lambda, then dropout order.
    pub fn cells(&self, kind: ProbeKind) -> Vec<Hyperparams> {
        let dropouts: Vec<Option<f64>> = match kind {
            ProbeKind::Linear => vec![None],
            ProbeKind::Mlp if self.dropouts.is_empty() => vec![Some(0.1)],
            ProbeKind::Mlp => self.dropouts.iter().map(|&d| Some(d)).collect(),
        };
        let mut out = Vec::new();
        for &lr in &self.lrs {
            for &lambda in &self.lambdas {
                for &dropout in &dropouts {
                    out.push(Hyperparams { lr, lambda, dropout });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.lrs.is_empty() || self.lambdas.is_empty() {
            return Err(ProbeError::InvalidConfig("empty hyperparameter grid".into()));
        }
        if self.lrs.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(ProbeError::InvalidConfig("learning rates must be positive".into()));
        }
        if self.lambdas.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(ProbeError::InvalidConfig("lambda values must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sweep result of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub index: usize,
    pub hp: Hyperparams,
    pub val_score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub kind: ProbeKind,
    pub best: Hyperparams,
    pub cells: Vec<CellOutcome>,
    pub probe: Probe,
    pub train_r2: f64,
    pub val_r2: f64,
    /// Filled when a test set was supplied.
    pub test_r2: Option<f64>,
    pub train_predictions: Array2<f64>,
    pub test_predictions: Option<Array2<f64>>,
}

fn fit_arrays(kind: ProbeKind, req: FitRequest<'_>, config: &TrainConfig) -> Result<(Probe, Option<f64>), ProbeError> {
    match kind {
        ProbeKind::Linear => fit_linear_arrays(req, config).map(|(p, s)| (Probe::Linear(p), s)),
        ProbeKind::Mlp => fit_mlp_arrays(req, config).map(|(p, s)| (Probe::Mlp(p), s)),
    }
}

/// Higher score first; ties go to the larger lambda, then the smaller lr.
fn cell_order(a: &CellOutcome, b: &CellOutcome) -> Ordering {
    let sa = a.val_score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.val_score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa)
        .then(b.hp.lambda.total_cmp(&a.hp.lambda))
        .then(a.hp.lr.total_cmp(&b.hp.lr))
        .then(a.index.cmp(&b.index))
}

/// Train every grid cell for `sweep_epochs`, pick the best by validation R²
/// and refit it with [`train_final`]. Cells run in parallel, each on its own
/// derived seed, so the outcome does not depend on scheduling.
pub fn grid_search(
    kind: ProbeKind,
    train: &TransitionSet,
    val: &TransitionSet,
    test: Option<&TransitionSet>,
    grid: &GridSpec,
    config: &TrainConfig,
) -> Result<GridSearchOutcome, ProbeError> {
    grid.validate()?;
    config.validate()?;
    if train.is_empty() {
        return Err(ProbeError::EmptyTrain);
    }
    let cells = grid.cells(kind);
    let mut outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .enumerate()
        .map(|(index, hp)| {
            let mut req = FitRequest::new(train.features.view(), train.targets.view(), *hp, config.sweep_epochs);
            req.val = Some((val.features.view(), val.targets.view()));
            req.stream_seed = derive_seed(config.seed, "cell", index as u64);
            match fit_arrays(kind, req, config) {
                Ok((_, Some(score))) if score.is_finite() => CellOutcome {
                    index,
                    hp: *hp,
                    val_score: Some(score),
                    error: None,
                },
                Ok(_) => CellOutcome {
                    index,
                    hp: *hp,
                    val_score: None,
                    error: Some("no finite validation score".into()),
                },
                Err(e) => CellOutcome {
                    index,
                    hp: *hp,
                    val_score: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    outcomes.sort_by_key(|c| c.index);

    let best = outcomes
        .iter()
        .filter(|c| c.val_score.is_some())
        .min_by(|a, b| cell_order(a, b))
        .map(|c| c.hp);
    let Some(best) = best else {
        return Err(ProbeError::AllCellsFailed(
            outcomes
                .iter()
                .map(|c| {
                    format!(
                        "lr={:e} lambda={:e}: {}",
                        c.hp.lr,
                        c.hp.lambda,
                        c.error.as_deref().unwrap_or("unknown")
                    )
                })
                .collect(),
        ));
    };
    log::debug!("{} grid winner lr={:e} lambda={:e}", kind, best.lr, best.lambda);

    let (probe, val_r2) = train_final(kind, train, val, &best, config)?;
    let train_predictions = probe.predict(train.features.view())?;
    let train_r2 = validation_score(&train.targets, &train_predictions);
    let (test_r2, test_predictions) = match test {
        Some(t) if !t.is_empty() => {
            let pred = probe.predict(t.features.view())?;
            (Some(validation_score(&t.targets, &pred)), Some(pred))
        }
        _ => (None, None),
    };
    Ok(GridSearchOutcome {
        kind,
        best,
        cells: outcomes,
        probe,
        train_r2,
        val_r2,
        test_r2,
        train_predictions,
        test_predictions,
    })
}

/// Refit with fixed hyperparameters for up to `final_epochs`, early-stopping
/// on validation R² and returning the best epoch's parameters and score.
pub fn train_final(
    kind: ProbeKind,
    train: &TransitionSet,
    val: &TransitionSet,
    hp: &Hyperparams,
    config: &TrainConfig,
) -> Result<(Probe, f64), ProbeError> {
    let mut req = FitRequest::new(train.features.view(), train.targets.view(), *hp, config.final_epochs);
    if !val.is_empty() {
        req.val = Some((val.features.view(), val.targets.view()));
    }
    req.stream_seed = derive_seed(config.seed, "final", 0);
    req.early_stop = true;
    let (probe, score) = fit_arrays(kind, req, config)?;
    let score = match score {
        Some(s) => s,
        None => validation_score(&train.targets, &probe.predict(train.features.view())?),
    };
    Ok((probe, score))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(index: usize, score: f64, lr: f64, lambda: f64) -> CellOutcome {
        CellOutcome {
            index,
            hp: Hyperparams { lr, lambda, dropout: None },
            val_score: Some(score),
            error: None,
        }
    }

    #[test]
    fn ties_prefer_larger_lambda_then_smaller_lr() {
        let mut cells = [
            cell(0, 0.5, 1e-3, 1e-9),
            cell(1, 0.5, 1e-4, 1e-7),
            cell(2, 0.5, 1e-5, 1e-7),
            cell(3, 0.4, 1e-5, 1e-6),
        ];
        cells.sort_by(cell_order);
        assert_eq!(cells[0].index, 2);
        assert_eq!(cells[1].index, 1);
        assert_eq!(cells[3].index, 3);
    }

    #[test]
    fn linear_cells_ignore_dropout() {
        let g = GridSpec { lrs: vec![1e-3, 1e-4], lambdas: vec![0.0], dropouts: vec![0.1, 0.2] };
        assert_eq!(g.cells(ProbeKind::Linear).len(), 2);
        assert_eq!(g.cells(ProbeKind::Mlp).len(), 4);
        assert!(g.cells(ProbeKind::Linear).iter().all(|c| c.dropout.is_none()));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let g = GridSpec { lrs: vec![], lambdas: vec![1e-9], dropouts: vec![] };
        assert!(g.validate().is_err());
    }
}
