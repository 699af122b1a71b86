//! Adaptive-moment optimizer over a flat parameter vector.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Adam {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn advance(&mut self, grad: &[f64]) -> (f64, f64) {
        debug_assert_eq!(grad.len(), self.m.len());
        let AdamParams { beta1, beta2, .. } = self.params;
        self.t += 1;
        for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grad) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
        }
        (1.0 - beta1.powi(self.t), 1.0 - beta2.powi(self.t))
    }

    /// Plain update `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        let (c1, c2) = self.advance(grad);
        let eps = self.params.eps;
        for ((th, m), v) in theta.iter_mut().zip(&self.m).zip(&self.v) {
            *th -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        }
    }

    /// Update on the smooth gradient followed by the soft-threshold that
    /// solves the L1 proximal problem in Adam's diagonal metric:
    /// `theta = soft(z, lr * l1 / (sqrt(v_hat) + eps))`.
    ///
    /// Its fixed points are exactly the Lasso stationarity conditions and
    /// coordinates whose smooth gradient stays below `l1` are held at zero.
    pub fn step_l1_prox(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, l1: f64) {
        let (c1, c2) = self.advance(grad);
        let eps = self.params.eps;
        for ((th, m), v) in theta.iter_mut().zip(&self.m).zip(&self.v) {
            let denom = (v / c2).sqrt() + eps;
            let z = *th - lr * (m / c1) / denom;
            *th = soft_threshold(z, lr * l1 / denom);
        }
    }
}

pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}
