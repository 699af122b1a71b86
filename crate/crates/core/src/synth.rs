//! Synthetic closed-loop systems with known dynamics.
//!
//! Three systems are available:
//!
//! * `noisy_drift`: latent `s_{t+1} = s_t + c (v(s_t) + kappa B u_t + q xi_t)`
//!   where `v(s) = L s + 0.3 sin(C s + phi)` has a stable linear part
//!   `L = -gamma I + S` (`S` skew-symmetric, `gamma` the damping) and a fixed sinusoidal part, and
//!   `u_{t+1} = r u_t + sqrt(1 - r^2) eta_t` is a low-dimensional persistent
//!   intent, mixed in by a fixed `B`, that the embedding never shows. `c` is `drift_scale` and `q` is `process_noise`,
//!   so `drift_scale = 0` is a fixed point.
//! * `torus_rotation`: `x_{t+1} = (x_t + alpha) mod 1`, embedded as
//!   `(cos 2 pi x, sin 2 pi x)`.
//! * `linear_contraction`: `s_{t+1} = rho s_t`.
//!
//! Every system is observed through `N` patches `p_{t,i} = e(s_t) + sigma_e xi`.
//! Per layer, activations are `a_t = tanh(R z_t) + sigma_a xi` with
//! `z_t = [(ebar_t - e(s_t)) / sd, v(s_t), u_t]` for noisy_drift: the error of
//! the frame the agent sees (in units of its standard deviation), the drift
//! and the intent. The other systems use `[(ebar_t - e(s_t)) / sd, e(s_t)]`.
//! With `informative = false` activations are unit Gaussian noise instead.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    self, DatasetError, Episode, FeatureMode, LayerId, SplitSpec, TrajectoryDataset,
};
use crate::linalg::lstsq_normal;
use crate::rng::derive_rng;
use crate::stats::r2_score;

/// Sidecar written next to the manifest so oracles can regenerate the latent.
pub const SYNTH_SPEC_FILE: &str = "synth_spec.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0} is not a synthetic dataset (no {SYNTH_SPEC_FILE})")]
    NotSynthetic(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("oracle undefined: {0}")]
    Oracle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    NoisyDrift,
    TorusRotation,
    LinearContraction,
}

fn default_process_noise() -> f64 {
    1.0
}

fn default_intent_scale() -> f64 {
    1.0
}

fn default_damping() -> f64 {
    0.1
}

fn default_intent_dim() -> usize {
    2
}

fn default_intent_persistence() -> f64 {
    0.99
}

fn default_layers() -> Vec<LayerId> {
    vec![15]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSystemSpec {
    pub kind: SystemKind,
    /// Embedding dimension `d` (must be 2 for `torus_rotation`).
    pub state_dim: usize,
    pub activation_dim: usize,
    pub patch_count: usize,
    pub drift_scale: f64,
    /// Per-patch observation noise `sigma_e`.
    pub obs_noise: f64,
    /// Activation noise `sigma_a`.
    pub act_noise: f64,
    pub informative: bool,
    pub seed: u64,
    /// Latent noise relative to `drift_scale` (noisy_drift only).
    #[serde(default = "default_process_noise")]
    pub process_noise: f64,
    /// Damping `gamma` of the linear drift (noisy_drift).
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Weight `kappa` of the hidden intent in the state update (noisy_drift).
    #[serde(default = "default_intent_scale")]
    pub intent_scale: f64,
    /// Dimension of the intent `u` (noisy_drift).
    #[serde(default = "default_intent_dim")]
    pub intent_dim: usize,
    /// AR(1) coefficient `r` of the intent, in [0, 1]; 1 holds it fixed per episode.
    #[serde(default = "default_intent_persistence")]
    pub intent_persistence: f64,
    /// Rotation per step (torus_rotation); defaults to sqrt(2) - 1.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Contraction factor (linear_contraction); defaults to 0.9.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Fixed start for every torus episode; random when absent.
    #[serde(default)]
    pub x0: Option<f64>,
    #[serde(default = "default_layers")]
    pub layers: Vec<LayerId>,
    #[serde(default)]
    pub name: Option<String>,
}

impl SynthSystemSpec {
    /// The informative `noisy_drift` system used throughout the test suite.
    pub fn noisy_drift(state_dim: usize, activation_dim: usize, seed: u64) -> Self {
        SynthSystemSpec {
            kind: SystemKind::NoisyDrift,
            state_dim,
            activation_dim,
            patch_count: 4,
            drift_scale: 0.02,
            obs_noise: 0.4,
            act_noise: 0.05,
            informative: true,
            seed,
            process_noise: default_process_noise(),
            damping: default_damping(),
            intent_scale: default_intent_scale(),
            intent_dim: default_intent_dim(),
            intent_persistence: default_intent_persistence(),
            alpha: None,
            rho: None,
            x0: None,
            layers: default_layers(),
            name: None,
        }
    }

    pub fn torus(alpha: f64, seed: u64) -> Self {
        SynthSystemSpec {
            kind: SystemKind::TorusRotation,
            state_dim: 2,
            activation_dim: 8,
            patch_count: 2,
            drift_scale: 0.0,
            obs_noise: 0.0,
            act_noise: 0.0,
            informative: true,
            seed,
            process_noise: 0.0,
            damping: default_damping(),
            intent_scale: 0.0,
            intent_dim: 0,
            intent_persistence: 0.0,
            alpha: Some(alpha),
            rho: None,
            x0: None,
            layers: default_layers(),
            name: None,
        }
    }

    pub fn contraction(state_dim: usize, rho: f64, seed: u64) -> Self {
        SynthSystemSpec {
            kind: SystemKind::LinearContraction,
            state_dim,
            activation_dim: 8,
            patch_count: 2,
            drift_scale: 0.0,
            obs_noise: 0.0,
            act_noise: 0.0,
            informative: true,
            seed,
            process_noise: 0.0,
            damping: default_damping(),
            intent_scale: 0.0,
            intent_dim: 0,
            intent_persistence: 0.0,
            alpha: None,
            rho: Some(rho),
            x0: None,
            layers: default_layers(),
            name: None,
        }
    }

    pub fn alpha_or_default(&self) -> f64 {
        self.alpha.unwrap_or(std::f64::consts::SQRT_2 - 1.0)
    }

    pub fn rho_or_default(&self) -> f64 {
        self.rho.unwrap_or(0.9)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.state_dim == 0 || self.activation_dim == 0 || self.patch_count == 0 {
            return bad("state_dim, activation_dim and patch_count must be positive".into());
        }
        for (label, v) in [
            ("obs_noise", self.obs_noise),
            ("act_noise", self.act_noise),
            ("process_noise", self.process_noise),
            ("intent_scale", self.intent_scale),
            ("damping", self.damping),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{label} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.intent_persistence) {
            return bad(format!(
                "intent_persistence must lie in [0, 1], got {}",
                self.intent_persistence
            ));
        }
        if !self.drift_scale.is_finite() || self.drift_scale < 0.0 {
            return bad(format!("drift_scale must be finite and >= 0, got {}", self.drift_scale));
        }
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        match self.kind {
            SystemKind::TorusRotation => {
                if self.state_dim != 2 {
                    return bad("torus_rotation embeds into 2 dimensions; set state_dim = 2".into());
                }
                if !self.alpha_or_default().is_finite() {
                    return bad("alpha must be finite".into());
                }
            }
            SystemKind::LinearContraction => {
                let rho = self.rho_or_default();
                if !(rho > 0.0 && rho < 1.0) {
                    return bad(format!("rho must lie in (0, 1), got {rho}"));
                }
            }
            SystemKind::NoisyDrift => {}
        }
        Ok(())
    }
}

const READOUT_GAIN: f64 = 0.5;
/// Small enough that `v` stays a contraction (one equilibrium, no basins).
const SINE_AMPLITUDE: f64 = 0.3;

fn embed_dim_of(spec: &SynthSystemSpec) -> usize {
    if spec.kind == SystemKind::TorusRotation {
        2
    } else {
        spec.state_dim
    }
}

/// Length of the readout input `z_t`.
fn readout_width(spec: &SynthSystemSpec) -> usize {
    let d = embed_dim_of(spec);
    match spec.kind {
        SystemKind::NoisyDrift => 2 * d + spec.intent_dim,
        _ => 2 * d,
    }
}

/// `z_t` for every step: the frame's observation error `ebar_t - e(s_t)`
/// scaled to unit variance, then the drift `v(s_t)` and intent `u_t`
/// (noisy_drift) or the clean embedding (other systems).
fn readout_inputs(
    spec: &SynthSystemSpec,
    params: &SystemParams,
    latent: &Array2<f64>,
    clean: &Array2<f64>,
    pooled: &Array2<f64>,
) -> Array2<f64> {
    let (len, d) = clean.dim();
    let noise_sd = spec.obs_noise / (spec.patch_count as f64).sqrt();
    let inv = if noise_sd > 0.0 { 1.0 / noise_sd } else { 1.0 };
    let mut z = Array2::zeros((len, readout_width(spec)));
    for t in 0..len {
        z.slice_mut(s![t, ..d]).assign(&((&pooled.row(t) - &clean.row(t)) * inv));
        if spec.kind == SystemKind::NoisyDrift {
            let st = latent.slice(s![t, ..d]).to_owned();
            z.slice_mut(s![t, d..2 * d]).assign(&params.drift(&st));
            z.slice_mut(s![t, 2 * d..]).assign(&latent.slice(s![t, d..]));
        } else {
            z.slice_mut(s![t, d..]).assign(&clean.row(t));
        }
    }
    z
}

/// Parameters drawn once from the master seed.
struct SystemParams {
    linear: Array2<f64>,
    freq: Array2<f64>,
    phase: Array1<f64>,
    /// `B`, `[d x m]`.
    intent_mix: Array2<f64>,
    readouts: BTreeMap<LayerId, Array2<f64>>,
}

impl SystemParams {
    fn draw(spec: &SynthSystemSpec) -> Self {
        let d = spec.state_dim;
        let mut rng = derive_rng(spec.seed, "params", 0);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

        let skew_scale = 0.5 / (d as f64).sqrt();
        let w = Array2::from_shape_fn((d, d), |_| skew_scale * normal(&mut rng));
        let linear = -spec.damping * Array2::<f64>::eye(d) + (&w - &w.t());

        let freq_scale = 1.0 / (d as f64).sqrt();
        let freq = Array2::from_shape_fn((d, d), |_| freq_scale * normal(&mut rng));
        let phase = Array1::from_shape_fn(d, |_| rng.random_range(0.0..TAU));
        let m = spec.intent_dim;
        let mix_scale = 1.0 / (m.max(1) as f64).sqrt();
        let intent_mix = Array2::from_shape_fn((d, m), |_| mix_scale * normal(&mut rng));

        let width = readout_width(spec);
        let mut readouts = BTreeMap::new();
        for layer in &spec.layers {
            let mut lrng = derive_rng(spec.seed, "readout", *layer as u64);
            let gain = READOUT_GAIN / (width as f64).sqrt();
            readouts.insert(
                *layer,
                Array2::from_shape_fn((spec.activation_dim, width), |_| gain * normal(&mut lrng)),
            );
        }
        SystemParams {
            linear,
            freq,
            phase,
            intent_mix,
            readouts,
        }
    }

    fn drift(&self, s: &Array1<f64>) -> Array1<f64> {
        let mut v = self.linear.dot(s);
        let arg = self.freq.dot(s) + &self.phase;
        v.zip_mut_with(&arg, |vi, a| *vi += SINE_AMPLITUDE * a.sin());
        v
    }
}

/// `x_{t+1} = (x_t + alpha) mod 1` for `len` steps starting at `x0`.
pub fn torus_orbit(alpha: f64, x0: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut x = x0.rem_euclid(1.0);
    for _ in 0..len {
        out.push(x);
        x = (x + alpha).rem_euclid(1.0);
    }
    out
}

/// A generated dataset plus the latent it was generated from.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: TrajectoryDataset,
    /// Per episode latent: `[T, d + m]` state then intent (noisy_drift), `[T, d]`
    /// (linear_contraction) or `[T, 1]` angle in [0, 1) (torus_rotation).
    pub latents: Vec<Array2<f64>>,
    /// Per episode: `[T, d]` noise-free embedding `e(s_t)`.
    pub clean_embeddings: Vec<Array2<f64>>,
}

fn embed_latent(spec: &SynthSystemSpec, latent: &Array2<f64>) -> Array2<f64> {
    match spec.kind {
        SystemKind::TorusRotation => {
            let t = latent.nrows();
            Array2::from_shape_fn((t, 2), |(i, j)| {
                let a = TAU * latent[[i, 0]];
                if j == 0 {
                    a.cos()
                } else {
                    a.sin()
                }
            })
        }
        SystemKind::NoisyDrift => latent.slice(s![.., ..latent.ncols() - spec.intent_dim]).to_owned(),
        SystemKind::LinearContraction => latent.clone(),
    }
}

fn simulate_latent(spec: &SynthSystemSpec, params: &SystemParams, episode: usize, len: usize) -> Array2<f64> {
    let mut rng = derive_rng(spec.seed, "latent", episode as u64);
    match spec.kind {
        SystemKind::TorusRotation => {
            let x0 = spec.x0.unwrap_or_else(|| rng.random_range(0.0..1.0));
            let orbit = torus_orbit(spec.alpha_or_default(), x0, len);
            Array2::from_shape_vec((len, 1), orbit).expect("shape")
        }
        SystemKind::LinearContraction => {
            let d = spec.state_dim;
            let rho = spec.rho_or_default();
            let mut out = Array2::zeros((len, d));
            let mut s = Array1::from_shape_fn(d, |_| StandardNormal.sample(&mut rng));
            for t in 0..len {
                out.row_mut(t).assign(&s);
                s *= rho;
            }
            out
        }
        SystemKind::NoisyDrift => {
            let d = spec.state_dim;
            let c = spec.drift_scale;
            let q = spec.process_noise;
            let kappa = spec.intent_scale;
            let r = spec.intent_persistence;
            let innov = (1.0 - r * r).sqrt();
            let m = spec.intent_dim;
            let mut out = Array2::zeros((len, d + m));
            let mut s = Array1::from_shape_fn(d, |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * z
            });
            let mut u = Array1::from_shape_fn(m, |_| StandardNormal.sample(&mut rng));
            for t in 0..len {
                out.slice_mut(s![t, ..d]).assign(&s);
                out.slice_mut(s![t, d..]).assign(&u);
                if c == 0.0 {
                    continue;
                }
                let v = params.drift(&s) + kappa * params.intent_mix.dot(&u);
                for i in 0..d {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    s[i] += c * (v[i] + q * xi);
                }
                for ui in u.iter_mut() {
                    let eta: f64 = StandardNormal.sample(&mut rng);
                    *ui = r * *ui + innov * eta;
                }
            }
            out
        }
    }
}

fn observe(
    spec: &SynthSystemSpec,
    params: &SystemParams,
    episode: usize,
    latent: &Array2<f64>,
    clean: &Array2<f64>,
) -> (Vec<f32>, BTreeMap<LayerId, Vec<f32>>) {
    let (len, d) = clean.dim();
    let n = spec.patch_count;
    let mut prng = derive_rng(spec.seed, "patches", episode as u64);
    let mut patches = Vec::with_capacity(len * n * d);
    for t in 0..len {
        for _ in 0..n {
            for j in 0..d {
                let mut v = clean[[t, j]];
                if spec.obs_noise > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut prng);
                    v += spec.obs_noise * z;
                }
                patches.push(v as f32);
            }
        }
    }
    let z = spec.informative.then(|| {
        let pooled = pool_patches(&patches, len, n, d);
        readout_inputs(spec, params, latent, clean, &pooled)
    });
    let mut activations = BTreeMap::new();
    for layer in &spec.layers {
        let mut arng = derive_rng(spec.seed, &format!("act_{layer}"), episode as u64);
        let a = spec.activation_dim;
        let readout = &params.readouts[layer];
        let mut acts = Vec::with_capacity(len * a);
        for t in 0..len {
            let pre = z.as_ref().map(|z| readout.dot(&z.row(t)));
            for j in 0..a {
                let z: f64 = StandardNormal.sample(&mut arng);
                let v = match &pre {
                    Some(pre) => pre[j].tanh() + spec.act_noise * z,
                    None => z,
                };
                acts.push(v as f32);
            }
        }
        activations.insert(*layer, acts);
    }
    (patches, activations)
}

/// Mean over patches of the stored (f32) patch values, as a loader sees them.
fn pool_patches(patches: &[f32], len: usize, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(t, j)| {
        (0..n).map(|i| patches[(t * n + i) * d + j] as f64).sum::<f64>() / n as f64
    })
}

fn default_name(spec: &SynthSystemSpec) -> String {
    spec.name.clone().unwrap_or_else(|| {
        let kind = match spec.kind {
            SystemKind::NoisyDrift => "noisy_drift",
            SystemKind::TorusRotation => "torus_rotation",
            SystemKind::LinearContraction => "linear_contraction",
        };
        format!("{kind}-seed{}", spec.seed)
    })
}

/// Generate a dataset in memory. Episodes are generated in parallel; each
/// draws from its own derived streams so the result is schedule-independent.
pub fn generate_in_memory(
    spec: &SynthSystemSpec,
    episodes: usize,
    len: usize,
) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    if episodes == 0 {
        return Err(SynthError::InvalidSpec("episodes must be >= 1".into()));
    }
    if len < 2 {
        return Err(SynthError::InvalidSpec("episode length T must be >= 2".into()));
    }
    let params = SystemParams::draw(spec);
    let width = episodes.to_string().len().max(4);
    let parts: Vec<(Episode, Array2<f64>, Array2<f64>)> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let latent = simulate_latent(spec, &params, e, len);
            let clean = embed_latent(spec, &latent);
            let (patches, activations) = observe(spec, &params, e, &latent, &clean);
            let ep = Episode {
                id: format!("ep{e:0width$}"),
                length: len,
                patches,
                activations,
            };
            (ep, latent, clean)
        })
        .collect();

    let mut eps = Vec::with_capacity(episodes);
    let mut latents = Vec::with_capacity(episodes);
    let mut cleans = Vec::with_capacity(episodes);
    for (ep, latent, clean) in parts {
        eps.push(ep);
        latents.push(latent);
        cleans.push(clean);
    }
    let embed_dim = embed_dim_of(spec);
    let dataset = TrajectoryDataset {
        name: default_name(spec),
        embed_dim,
        patch_count: spec.patch_count,
        layers: spec.layers.clone(),
        activation_dims: spec.layers.iter().map(|l| (*l, spec.activation_dim)).collect(),
        episodes: eps,
    };
    dataset.validate()?;
    Ok(SynthOutput {
        dataset,
        latents,
        clean_embeddings: cleans,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub spec: SynthSystemSpec,
    pub episodes: usize,
    pub length: usize,
}

/// Generate and write a dataset directory (plus the spec sidecar).
pub fn generate(
    spec: &SynthSystemSpec,
    episodes: usize,
    len: usize,
    out_dir: impl AsRef<Path>,
) -> Result<TrajectoryDataset, SynthError> {
    let out_dir = out_dir.as_ref();
    let out = generate_in_memory(spec, episodes, len)?;
    dataset::write_dataset(&out.dataset, out_dir)?;
    let sidecar = SynthSidecar {
        spec: spec.clone(),
        episodes,
        length: len,
    };
    let path = out_dir.join(SYNTH_SPEC_FILE);
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|source| SynthError::Io { path, source })?;
    Ok(out.dataset)
}

pub fn read_sidecar(dir: impl AsRef<Path>) -> Result<SynthSidecar, SynthError> {
    let dir = dir.as_ref();
    let path = dir.join(SYNTH_SPEC_FILE);
    if !path.is_file() {
        return Err(SynthError::NotSynthetic(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(|source| SynthError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| SynthError::Json { path, source })
}

/// Oracle features for the activation stream: the readout input `z_t`
/// itself, i.e. everything an informative activation encodes.
fn oracle_features(
    spec: &SynthSystemSpec,
    params: &SystemParams,
    out: &SynthOutput,
    episode: usize,
) -> Array2<f64> {
    let latent = &out.latents[episode];
    if !spec.informative {
        return Array2::zeros((latent.nrows(), 0));
    }
    let pooled = out.dataset.pooled_embeddings(episode);
    readout_inputs(spec, params, latent, &out.clean_embeddings[episode], &pooled)
}

/// Test R² of an exact least-squares fit (normal equations, no intercept) of
/// `Delta e` on oracle features, under the default chronological split.
///
/// * `Activations`: the pre-nonlinearity readout input `z_t` (none when the
///   activations are uninformative).
/// * `Embeddings`: the observed pooled embedding `e_t`.
pub fn oracle_r2(
    spec: &SynthSystemSpec,
    k: usize,
    mode: FeatureMode,
    episodes: usize,
    len: usize,
) -> Result<f64, SynthError> {
    if mode == FeatureMode::Joint {
        return Err(SynthError::Oracle("joint mode has no oracle; use activations or embeddings".into()));
    }
    let out = generate_in_memory(spec, episodes, len)?;
    let params = SystemParams::draw(spec);
    let set = dataset::compute_transitions(&out.dataset, k, None, FeatureMode::Embeddings)?;
    let features = match mode {
        FeatureMode::Embeddings => set.features.clone(),
        _ => {
            let per_ep: Vec<Array2<f64>> = (0..out.latents.len())
                .map(|e| oracle_features(spec, &params, &out, e))
                .collect();
            let p = per_ep[0].ncols();
            let mut f = Array2::zeros((set.len(), p));
            for (i, o) in set.origins.iter().enumerate() {
                f.row_mut(i).assign(&per_ep[o.episode].row(o.t));
            }
            f
        }
    };
    let (tr, _, te) = SplitSpec::default().sizes(set.len());
    if tr == 0 || te < 2 {
        return Err(SynthError::Oracle(format!("too few samples ({}) for a split", set.len())));
    }
    let n = set.len();
    let x_train = features.slice(s![..tr, ..]).to_owned();
    let y_train = set.targets.slice(s![..tr, ..]).to_owned();
    let x_test = features.slice(s![n - te.., ..]).to_owned();
    let y_test = set.targets.slice(s![n - te.., ..]).to_owned();
    let pred = if features.ncols() == 0 {
        Array2::zeros(y_test.dim())
    } else {
        let beta = lstsq_normal(&x_train, &y_train);
        x_test.dot(&beta)
    };
    r2_score(y_test.view(), pred.view()).map_err(|e| SynthError::Oracle(e.to_string()))
}

/// [`oracle_r2`] for a dataset directory written by [`generate`].
pub fn oracle_r2_for_dataset(dir: impl AsRef<Path>, k: usize, mode: FeatureMode) -> Result<f64, SynthError> {
    let side = read_sidecar(dir)?;
    oracle_r2(&side.spec, k, mode, side.episodes, side.length)
}
