use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::{
    check_training_data, train_loop, Adam, FitRequest, Hyperparams, LoopSettings, ProbeError,
    Standardizer, TrainConfig, Trainable,
};
use crate::dataset::TransitionSet;
use crate::rng::derive_seed;

/// `f(x) = W^T x` with `W` of shape `[features, d]` and no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Array2<f64>,
    pub lambda: f64,
    pub lr: f64,
    pub standardizer: Option<Standardizer>,
}

impl LinearProbe {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        LinearProbe::from_weights(Array2::zeros((input_dim, output_dim)))
    }

    pub fn from_weights(weights: Array2<f64>) -> Self {
        LinearProbe {
            weights: weights.as_standard_layout().to_owned(),
            lambda: 0.0,
            lr: 0.0,
            standardizer: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array2<f64>, ProbeError> {
        if features.ncols() != self.input_dim() {
            return Err(ProbeError::DimensionMismatch {
                expected: self.input_dim(),
                got: features.ncols(),
            });
        }
        Ok(match &self.standardizer {
            Some(s) => s.apply(features).dot(&self.weights),
            None => features.dot(&self.weights),
        })
    }

    /// Full objective `(1/2n)||XW - Y||^2 + lambda ||W||_1` and its
    /// (sub)gradient, with `sign(0) = 0`. `x` is taken as already transformed.
    pub fn objective_and_gradient(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Array2<f64>) {
        let n = x.nrows() as f64;
        let resid = x.dot(&self.weights) - y;
        let loss = resid.mapv(|r| r * r).sum() / (2.0 * n)
            + self.lambda * self.weights.mapv(f64::abs).sum();
        let grad = x.t().dot(&resid) / n + self.weights.mapv(|w| self.lambda * sign(w));
        (loss, grad)
    }
}

pub(crate) fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Trainable for LinearProbe {
    fn params(&self) -> &[f64] {
        self.weights.as_slice().expect("standard layout")
    }

    fn batch_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        grad: &mut [f64],
        _dropout_rng: &mut ChaCha8Rng,
    ) -> f64 {
        let nb = x.nrows() as f64;
        let resid = x.dot(&self.weights) - y;
        let g = x.t().dot(&resid) / nb;
        for (dst, src) in grad.iter_mut().zip(g.iter()) {
            *dst = *src;
        }
        resid.mapv(|r| r * r).sum() / (2.0 * nb)
    }

    fn penalty(&self) -> f64 {
        self.weights.mapv(f64::abs).sum()
    }

    fn apply_update(&mut self, adam: &mut Adam, grad: &mut [f64], lr: f64) {
        let lambda = self.lambda;
        let theta = self.weights.as_slice_mut().expect("standard layout");
        adam.step_l1_prox(theta, grad, lr, lambda);
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights)
    }
}

/// Train a linear probe on raw arrays. Returns the probe and, when a
/// validation pair was supplied, its best validation score.
pub fn fit_linear_arrays(
    req: FitRequest<'_>,
    config: &TrainConfig,
) -> Result<(LinearProbe, Option<f64>), ProbeError> {
    check_training_data(req.x, req.y)?;
    let standardizer = config.standardize_features.then(|| Standardizer::fit(req.x));
    let transform = |v: ArrayView2<f64>| match &standardizer {
        Some(s) => s.apply(v),
        None => v.to_owned(),
    };
    let x = transform(req.x);
    let val = req.val.map(|(vx, vy)| (transform(vx), vy.to_owned()));
    let mut probe = LinearProbe::zeros(x.ncols(), req.y.ncols());
    probe.lambda = req.hp.lambda;
    probe.lr = req.hp.lr;
    let (mut probe, score) = train_loop(
        probe,
        x.view(),
        req.y,
        config,
        LoopSettings {
            epochs: req.epochs,
            lr: req.hp.lr,
            lambda: req.hp.lambda,
            stream_seed: req.stream_seed,
            val: val.as_ref().map(|(vx, vy)| (vx.view(), vy)),
            early_stop: req.early_stop,
        },
    )?;
    probe.standardizer = standardizer;
    Ok((probe, score))
}

/// Train a linear probe for `config.final_epochs` epochs with fixed
/// hyperparameters.
pub fn fit_linear(
    train: &TransitionSet,
    hp: &Hyperparams,
    config: &TrainConfig,
) -> Result<LinearProbe, ProbeError> {
    let mut req = FitRequest::new(train.features.view(), train.targets.view(), *hp, config.final_epochs);
    req.stream_seed = derive_seed(config.seed, "fit", 0);
    fit_linear_arrays(req, config).map(|(p, _)| p)
}
