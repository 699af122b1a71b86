use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::linear::sign;
use super::{
    check_training_data, train_loop, Adam, FitRequest, Hyperparams, LoopSettings, ProbeError,
    Standardizer, TrainConfig, Trainable,
};
use crate::dataset::TransitionSet;
use crate::rng::{derive_rng, derive_seed};

/// Two-layer perceptron `W2^T relu(W1^T x + b1) + b2` with hidden width
/// `2 * input_dim` and inverted dropout on the hidden layer.
///
/// Parameters live in one flat buffer laid out as `W1 [p x h]`, `b1 [h]`,
/// `W2 [h x d]`, `b2 [d]`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProbe {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    params: Vec<f64>,
    pub dropout: f64,
    pub lambda: f64,
    pub lr: f64,
    pub standardizer: Option<Standardizer>,
}

impl MlpProbe {
    /// He-initialized weights, zero biases.
    pub fn new(input_dim: usize, output_dim: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        let hidden_dim = 2 * input_dim;
        let mut probe = MlpProbe {
            input_dim,
            hidden_dim,
            output_dim,
            params: vec![0.0; input_dim * hidden_dim + hidden_dim + hidden_dim * output_dim + output_dim],
            dropout,
            lambda: 0.0,
            lr: 0.0,
            standardizer: None,
        };
        let n1 = Normal::new(0.0, (2.0 / input_dim.max(1) as f64).sqrt()).expect("finite std");
        let n2 = Normal::new(0.0, (1.0 / hidden_dim.max(1) as f64).sqrt()).expect("finite std");
        let (w1, _, w2, _) = probe.ranges();
        for v in &mut probe.params[w1] {
            *v = n1.sample(rng);
        }
        for v in &mut probe.params[w2] {
            *v = n2.sample(rng);
        }
        probe
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn params_flat(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len(), "parameter count");
        self.params.copy_from_slice(params);
    }

    fn ranges(
        &self,
    ) -> (
        std::ops::Range<usize>,
        std::ops::Range<usize>,
        std::ops::Range<usize>,
        std::ops::Range<usize>,
    ) {
        let (p, h, d) = (self.input_dim, self.hidden_dim, self.output_dim);
        let a = p * h;
        let b = a + h;
        let c = b + h * d;
        (0..a, a..b, b..c, c..c + d)
    }

    fn is_weight(&self, i: usize) -> bool {
        let (w1, _, w2, _) = self.ranges();
        w1.contains(&i) || w2.contains(&i)
    }

    fn views(&self) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>, ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (w1, b1, w2, b2) = self.ranges();
        let (p, h, d) = (self.input_dim, self.hidden_dim, self.output_dim);
        (
            ArrayView2::from_shape((p, h), &self.params[w1]).expect("w1 shape"),
            ArrayView1::from(&self.params[b1]),
            ArrayView2::from_shape((h, d), &self.params[w2]).expect("w2 shape"),
            ArrayView1::from(&self.params[b2]),
        )
    }

    fn eval_forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (w1, b1, w2, b2) = self.views();
        let hidden = (x.dot(&w1) + &b1).mapv(|v| v.max(0.0));
        hidden.dot(&w2) + &b2
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array2<f64>, ProbeError> {
        if features.ncols() != self.input_dim {
            return Err(ProbeError::DimensionMismatch {
                expected: self.input_dim,
                got: features.ncols(),
            });
        }
        Ok(match &self.standardizer {
            Some(s) => self.eval_forward(s.apply(features).view()),
            None => self.eval_forward(features),
        })
    }

    /// MSE part of the loss and its gradient for a batch. `mask` holds the
    /// already-scaled dropout multipliers of the hidden units, or `None` for
    /// evaluation mode.
    fn mse_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        mask: Option<&Array2<f64>>,
        grad: &mut [f64],
    ) -> f64 {
        let (w1, b1, w2, b2) = self.views();
        let nb = x.nrows() as f64;
        let pre = x.dot(&w1) + &b1;
        let mut hidden = pre.mapv(|v| v.max(0.0));
        if let Some(m) = mask {
            hidden *= m;
        }
        let out = hidden.dot(&w2) + &b2;
        let resid = &out - &y;
        let loss = resid.mapv(|r| r * r).sum() / (2.0 * nb);

        let d_out = resid / nb;
        let g_w2 = hidden.t().dot(&d_out);
        let g_b2 = d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&w2.t());
        if let Some(m) = mask {
            d_hidden *= m;
        }
        d_hidden.zip_mut_with(&pre, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let g_w1 = x.t().dot(&d_hidden);
        let g_b1 = d_hidden.sum_axis(Axis(0));

        let (r1, rb1, r2, rb2) = self.ranges();
        copy_into(&mut grad[r1], g_w1.iter());
        copy_into(&mut grad[rb1], g_b1.iter());
        copy_into(&mut grad[r2], g_w2.iter());
        copy_into(&mut grad[rb2], g_b2.iter());
        loss
    }

    /// Full evaluation-mode objective `(1/2n)||f(X) - Y||^2 + lambda (|W1|_1 + |W2|_1)`
    /// and its flat (sub)gradient. `x` is taken as already transformed.
    pub fn objective_and_gradient(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mse = self.mse_gradient(x, y, None, &mut grad);
        for (i, g) in grad.iter_mut().enumerate() {
            if self.is_weight(i) {
                *g += self.lambda * sign(self.params[i]);
            }
        }
        (mse + self.lambda * self.penalty(), grad)
    }

    fn weight_l1(&self) -> f64 {
        let (w1, _, w2, _) = self.ranges();
        self.params[w1].iter().chain(&self.params[w2]).map(|v| v.abs()).sum()
    }

    /// Weights of the first layer as a `[p x h]` array.
    pub fn first_layer(&self) -> Array2<f64> {
        self.views().0.to_owned()
    }

    pub fn hidden_bias(&self) -> Array1<f64> {
        self.views().1.to_owned()
    }

    pub fn output_weights(&self) -> Array2<f64> {
        self.views().2.to_owned()
    }

    pub fn output_bias(&self) -> Array1<f64> {
        self.views().3.to_owned()
    }
}

fn copy_into<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *s;
    }
}

impl Trainable for MlpProbe {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn batch_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        grad: &mut [f64],
        dropout_rng: &mut ChaCha8Rng,
    ) -> f64 {
        if self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            let mask = Array2::from_shape_fn((x.nrows(), self.hidden_dim), |_| {
                if dropout_rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            self.mse_gradient(x, y, Some(&mask), grad)
        } else {
            self.mse_gradient(x, y, None, grad)
        }
    }

    fn penalty(&self) -> f64 {
        self.weight_l1()
    }

    fn apply_update(&mut self, adam: &mut Adam, grad: &mut [f64], lr: f64) {
        if self.lambda != 0.0 {
            for (i, g) in grad.iter_mut().enumerate() {
                if self.is_weight(i) {
                    *g += self.lambda * sign(self.params[i]);
                }
            }
        }
        adam.step(&mut self.params, grad, lr);
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.eval_forward(x)
    }
}

/// Train an MLP probe on raw arrays. Returns the probe and, when a
/// validation pair was supplied, its best validation score.
pub fn fit_mlp_arrays(
    req: FitRequest<'_>,
    config: &TrainConfig,
) -> Result<(MlpProbe, Option<f64>), ProbeError> {
    check_training_data(req.x, req.y)?;
    let dropout = req
        .hp
        .dropout
        .unwrap_or_else(|| config.dropout_grid.first().copied().unwrap_or(0.1));
    if !(0.0..1.0).contains(&dropout) {
        return Err(ProbeError::InvalidConfig(format!("dropout {dropout} outside [0, 1)")));
    }
    let standardizer = config.standardize_features.then(|| Standardizer::fit(req.x));
    let transform = |v: ArrayView2<f64>| match &standardizer {
        Some(s) => s.apply(v),
        None => v.to_owned(),
    };
    let x = transform(req.x);
    let val = req.val.map(|(vx, vy)| (transform(vx), vy.to_owned()));
    let mut init_rng = derive_rng(req.stream_seed, "mlp_init", 0);
    let mut probe = MlpProbe::new(x.ncols(), req.y.ncols(), dropout, &mut init_rng);
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

/// Train an MLP probe for `config.final_epochs` epochs with fixed
/// hyperparameters.
pub fn fit_mlp(train: &TransitionSet, hp: &Hyperparams, config: &TrainConfig) -> Result<MlpProbe, ProbeError> {
    let mut req = FitRequest::new(train.features.view(), train.targets.view(), *hp, config.final_epochs);
    req.stream_seed = derive_seed(config.seed, "fit", 0);
    fit_mlp_arrays(req, config).map(|(p, _)| p)
}
