//! Linear (L1-penalized, bias-free) and two-layer MLP probes from features at
//! time `t` to the transition vector `Delta e_{t -> t+K}`.
//!
//! Both probes minimize
//!
//! ```text
//! (1 / 2n) * sum_i || f(x_i) - y_i ||^2  +  lambda * ||W||_1
//! ```
//!
//! with mini-batch Adam. The linear probe treats the L1 term with a
//! soft-threshold step in Adam's metric so that weights below the penalty
//! sit at exactly zero; the MLP adds the L1 subgradient to its weights.

mod adam;
mod grid;
mod linear;
mod mlp;
mod result;

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TransitionSet;
use crate::rng::derive_rng;
use crate::stats;

pub use adam::{soft_threshold, Adam, AdamParams};
pub use grid::{grid_search, train_final, CellOutcome, GridSearchOutcome, GridSpec};
pub use linear::{fit_linear, fit_linear_arrays, LinearProbe};
pub use mlp::{fit_mlp, fit_mlp_arrays, MlpProbe};
pub use result::{
    read_results_csv, read_results_json, write_results_csv, write_results_json, ProbeResult,
    ProbeType, ResultsIoError,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("no training samples")]
    EmptyTrain,
    #[error("feature dimension mismatch: probe expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch} (loss {loss}) with lr={lr:e}, lambda={lambda:e}")]
    Diverged {
        epoch: usize,
        loss: f64,
        lr: f64,
        lambda: f64,
    },
    #[error("every grid cell failed: {}", .0.join("; "))]
    AllCellsFailed(Vec<String>),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Linear,
    Mlp,
}

impl ProbeKind {
    pub fn label(self) -> &'static str {
        match self {
            ProbeKind::Linear => "Linear",
            ProbeKind::Mlp => "MLP",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "Linear" => Some(ProbeKind::Linear),
            "MLP" => Some(ProbeKind::Mlp),
            _ => None,
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub lambda: f64,
    /// MLP only.
    pub dropout: Option<f64>,
}

/// Training defaults: Adam, batch 512, 50 sweep epochs, 300 final epochs,
/// hard cap 1000, seed 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub sweep_epochs: usize,
    pub final_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub lr_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub dropout_grid: Vec<f64>,
    pub standardize_features: bool,
    /// Early-stopping patience in epochs (final refits only).
    pub patience: usize,
    /// Minimum validation improvement that resets the patience counter.
    pub min_delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            sweep_epochs: 50,
            final_epochs: 300,
            max_epochs: 1000,
            seed: 0,
            lr_grid: vec![1e-3, 1e-4, 1e-5],
            lambda_grid: vec![1e-7, 1e-8, 1e-9],
            dropout_grid: vec![0.1],
            standardize_features: false,
            patience: 50,
            min_delta: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam moments must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// Per-column centering and scaling fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

/// A trained probe of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    Linear(LinearProbe),
    Mlp(MlpProbe),
}

impl Probe {
    pub fn kind(&self) -> ProbeKind {
        match self {
            Probe::Linear(_) => ProbeKind::Linear,
            Probe::Mlp(_) => ProbeKind::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Probe::Linear(p) => p.input_dim(),
            Probe::Mlp(p) => p.input_dim(),
        }
    }

    /// Predicted `Delta e` for each feature row.
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array2<f64>, ProbeError> {
        match self {
            Probe::Linear(p) => p.predict(features),
            Probe::Mlp(p) => p.predict(features),
        }
    }
}

/// Predicted `e_{t+K} = e_t + f(x_t)` for every sample of a set.
pub fn predict_future_embeddings(probe: &Probe, set: &TransitionSet) -> Result<Array2<f64>, ProbeError> {
    Ok(&set.base_embeddings + &probe.predict(set.features.view())?)
}

/// Fit one probe of the requested kind with fixed hyperparameters for
/// `config.final_epochs` epochs and no early stopping.
pub fn fit_probe(
    kind: ProbeKind,
    train: &TransitionSet,
    hp: &Hyperparams,
    config: &TrainConfig,
) -> Result<Probe, ProbeError> {
    match kind {
        ProbeKind::Linear => fit_linear(train, hp, config).map(Probe::Linear),
        ProbeKind::Mlp => fit_mlp(train, hp, config).map(Probe::Mlp),
    }
}

/// Validation criterion: R² when defined, otherwise negative MSE.
pub(crate) fn validation_score(y: &Array2<f64>, pred: &Array2<f64>) -> f64 {
    match stats::r2_score(y.view(), pred.view()) {
        Ok(r2) => r2,
        Err(_) => {
            let n = y.len().max(1) as f64;
            -(y - pred).mapv(|v| v * v).sum() / n
        }
    }
}

/// What the shared training loop needs from a model.
pub(crate) trait Trainable: Clone {
    fn params(&self) -> &[f64];
    /// Smooth (MSE) loss of the batch, writing its gradient into `grad`.
    fn batch_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        grad: &mut [f64],
        dropout_rng: &mut ChaCha8Rng,
    ) -> f64;
    /// L1 penalty value at the current parameters.
    fn penalty(&self) -> f64;
    fn apply_update(&mut self, adam: &mut Adam, grad: &mut [f64], lr: f64);
    /// Evaluation-mode forward pass on already-transformed features.
    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64>;
}

/// Array-level training request shared by both probe kinds.
#[derive(Debug, Clone, Copy)]
pub struct FitRequest<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
    /// Optional validation pair for best-epoch selection and early stopping.
    pub val: Option<(ArrayView2<'a, f64>, ArrayView2<'a, f64>)>,
    pub hp: Hyperparams,
    pub epochs: usize,
    /// Seed of this fit's shuffle and dropout streams.
    pub stream_seed: u64,
    pub early_stop: bool,
}

impl<'a> FitRequest<'a> {
    pub fn new(x: ArrayView2<'a, f64>, y: ArrayView2<'a, f64>, hp: Hyperparams, epochs: usize) -> Self {
        FitRequest {
            x,
            y,
            val: None,
            hp,
            epochs,
            stream_seed: 0,
            early_stop: false,
        }
    }
}

pub(crate) struct LoopSettings<'a> {
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub stream_seed: u64,
    pub val: Option<(ArrayView2<'a, f64>, &'a Array2<f64>)>,
    pub early_stop: bool,
}

/// Mini-batch Adam over shuffled epochs. With a validation set the
/// best-scoring epoch's parameters are returned.
pub(crate) fn train_loop<M: Trainable>(
    mut model: M,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    config: &TrainConfig,
    settings: LoopSettings<'_>,
) -> Result<(M, Option<f64>), ProbeError> {
    config.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(ProbeError::EmptyTrain);
    }
    let epochs = settings.epochs.min(config.max_epochs);
    let mut shuffle_rng = derive_rng(settings.stream_seed, "shuffle", 0);
    let mut dropout_rng = derive_rng(settings.stream_seed, "dropout", 0);
    let mut adam = Adam::new(model.params().len(), config.adam());
    let mut grad = vec![0.0; model.params().len()];
    let mut order: Vec<usize> = (0..n).collect();

    let mut best: Option<(f64, M)> = None;
    let mut stale = 0usize;
    for epoch in 0..epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = model.batch_gradient(xb.view(), yb.view(), &mut grad, &mut dropout_rng)
                + settings.lambda * model.penalty();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ProbeError::Diverged {
                    epoch,
                    loss,
                    lr: settings.lr,
                    lambda: settings.lambda,
                });
            }
            model.apply_update(&mut adam, &mut grad, settings.lr);
        }
        if model.params().iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::Diverged {
                epoch,
                loss: f64::NAN,
                lr: settings.lr,
                lambda: settings.lambda,
            });
        }
        if let Some((vx, vy)) = settings.val {
            let score = validation_score(vy, &model.forward(vx));
            match &best {
                Some((b, _)) if score <= *b + config.min_delta => {
                    stale += 1;
                    if score > *b {
                        best = Some((score, model.clone()));
                    }
                }
                _ => {
                    best = Some((score, model.clone()));
                    stale = 0;
                }
            }
            if settings.early_stop && stale >= config.patience {
                log::debug!("early stop at epoch {epoch}");
                break;
            }
        }
    }
    Ok(match best {
        Some((score, m)) => (m, Some(score)),
        None => (model, None),
    })
}

pub(crate) fn check_training_data(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(), ProbeError> {
    if x.nrows() == 0 {
        return Err(ProbeError::EmptyTrain);
    }
    if x.nrows() != y.nrows() {
        return Err(ProbeError::InvalidConfig(format!(
            "{} feature rows but {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(ProbeError::InvalidConfig("non-finite training data".into()));
    }
    Ok(())
}
