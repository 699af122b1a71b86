//! C ABI over the worldprobe toolkit.
//!
//! Every function returns a [`WpStatus`]. On failure the message is kept per
//! thread and read with [`wp_last_error`]. Objects crossing the boundary are
//! opaque handles, created by a `*_new`/`*_load`/`*_fit` call and released
//! with the matching `*_free`. Matrices are row-major `double` buffers.
//!
//! The header is `include/worldprobe.h`, regenerated on every build.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::{ArrayView1, ArrayView2};
use worldprobe::analysis::{allan_deviation, AnalysisError};
use worldprobe::dataset::{load_dataset, write_dataset, DatasetError, TrajectoryDataset};
use worldprobe::koopman::{edmd_fit, k_step, KoopmanError, KoopmanEstimate, ObservableBasis};
use worldprobe::stats::{aggregate_overall_p, block_bootstrap, r2_score, BootstrapConfig, StatsError};
use worldprobe::synth::{generate, generate_in_memory, SynthError, SynthSystemSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    TooFewSamples = 4,
    Degenerate = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
    Internal = 9,
}

/// A loaded or generated trajectory dataset.
pub struct WpDataset(TrajectoryDataset);

/// A fitted EDMD Koopman matrix with its observable dictionary.
pub struct WpKoopman(KoopmanEstimate);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WpDatasetInfo {
    pub episodes: usize,
    pub total_steps: usize,
    pub embed_dim: usize,
    pub patch_count: usize,
    pub layer_count: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WpBootstrapResult {
    pub r2: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub block_length: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(WpStatus, String);

type FfiResult = Result<(), Failure>;

fn fail<T>(status: WpStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        let status = match &e {
            StatsError::ShapeMismatch { .. } => WpStatus::ShapeMismatch,
            StatsError::TooFewSamples { .. } => WpStatus::TooFewSamples,
            StatsError::ZeroVariance => WpStatus::Degenerate,
            StatsError::InvalidArgument(_) => WpStatus::InvalidArgument,
            StatsError::Probe(_) => WpStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        let status = match &e {
            AnalysisError::InvalidArgument(_) => WpStatus::InvalidArgument,
            AnalysisError::Degenerate(_) | AnalysisError::Empty(_) => WpStatus::Degenerate,
            AnalysisError::Io(_) | AnalysisError::Csv(_) => WpStatus::Io,
            AnalysisError::Dataset(_) => WpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let status = match &e {
            DatasetError::Io { .. } | DatasetError::MissingManifest(_) => WpStatus::Io,
            DatasetError::ManifestParse { .. } => WpStatus::Parse,
            DatasetError::ShapeMismatch { .. } => WpStatus::ShapeMismatch,
            DatasetError::TooFewSamples { .. } => WpStatus::TooFewSamples,
            _ => WpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Dataset(d) => d.into(),
            SynthError::Io { .. } => Failure(WpStatus::Io, e.to_string()),
            SynthError::Json { .. } => Failure(WpStatus::Parse, e.to_string()),
            _ => Failure(WpStatus::InvalidArgument, e.to_string()),
        }
    }
}

impl From<KoopmanError> for Failure {
    fn from(e: KoopmanError) -> Self {
        let status = match &e {
            KoopmanError::EmptySamples => WpStatus::TooFewSamples,
            KoopmanError::DimensionMismatch { .. } | KoopmanError::SampleMismatch { .. } => WpStatus::ShapeMismatch,
            KoopmanError::Io(_) | KoopmanError::Csv(_) => WpStatus::Io,
            _ => WpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

/// Run `f`, turning errors and panics into a status plus the thread's last
/// error message.
fn guard(f: impl FnOnce() -> FfiResult) -> WpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            WpStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        fail(WpStatus::NullPointer, format!("{name} is null"))
    } else {
        Ok(())
    }
}

unsafe fn matrix<'a>(p: *const f64, rows: usize, cols: usize, name: &str) -> Result<ArrayView2<'a, f64>, Failure> {
    non_null(p, name)?;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure(WpStatus::InvalidArgument, format!("{name}: size overflow")))?;
    let slice = std::slice::from_raw_parts(p, len);
    ArrayView2::from_shape((rows, cols), slice).map_err(|e| Failure(WpStatus::ShapeMismatch, e.to_string()))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(WpStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure(WpStatus::Parse, format!("{name}: {e}")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn wp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Variance-weighted R² of `yhat` against `y`, both `[n x d]`.
///
/// # Safety
/// `y` and `yhat` must point to `n * d` doubles; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn wp_r2_score(y: *const f64, yhat: *const f64, n: usize, d: usize, out: *mut f64) -> WpStatus {
    guard(|| {
        non_null(out, "out")?;
        let r2 = r2_score(matrix(y, n, d, "y")?, matrix(yhat, n, d, "yhat")?)?;
        *out = r2;
        Ok(())
    })
}

/// Moving-block bootstrap of R² with one confidence level.
///
/// # Safety
/// `y` and `yhat` must point to `n * d` doubles; `out` to one
/// `WpBootstrapResult`.
#[no_mangle]
pub unsafe extern "C" fn wp_block_bootstrap(
    y: *const f64,
    yhat: *const f64,
    n: usize,
    d: usize,
    n_reps: usize,
    level: f64,
    seed: u64,
    out: *mut WpBootstrapResult,
) -> WpStatus {
    guard(|| {
        non_null(out, "out")?;
        let config = BootstrapConfig {
            n_reps,
            levels: vec![level],
            seed,
        };
        let report = block_bootstrap(matrix(y, n, d, "y")?, matrix(yhat, n, d, "yhat")?, &config)?;
        let ci = report.intervals[0];
        *out = WpBootstrapResult {
            r2: report.r2,
            se: report.se,
            lower: ci.lower,
            upper: ci.upper,
            block_length: report.block_length,
        };
        Ok(())
    })
}

/// Fisher's combined p-value of `k` independent p-values.
///
/// # Safety
/// `p_values` must point to `k` doubles; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn wp_fisher_combine(p_values: *const f64, k: usize, out: *mut f64) -> WpStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = aggregate_overall_p(slice(p_values, k, "p_values")?)?.fisher_p;
        Ok(())
    })
}

/// Overlapping Allan deviation of a scalar series at each averaging time.
///
/// # Safety
/// `series` must point to `n` doubles, `taus` to `n_taus` sizes and `out` to
/// `n_taus` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wp_allan_deviation(
    series: *const f64,
    n: usize,
    taus: *const usize,
    n_taus: usize,
    out: *mut f64,
) -> WpStatus {
    guard(|| {
        non_null(out, "out")?;
        let adev = allan_deviation(slice(series, n, "series")?, slice(taus, n_taus, "taus")?)?;
        std::slice::from_raw_parts_mut(out, n_taus).copy_from_slice(&adev);
        Ok(())
    })
}

/// Generate a synthetic dataset in memory from a JSON system spec.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn wp_synth_generate(
    spec_json: *const c_char,
    episodes: usize,
    length: usize,
    out: *mut *mut WpDataset,
) -> WpStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec: SynthSystemSpec = parse_json(string(spec_json, "spec_json")?, "spec_json")?;
        let ds = generate_in_memory(&spec, episodes, length)?.dataset;
        *out = Box::into_raw(Box::new(WpDataset(ds)));
        Ok(())
    })
}

/// Generate a synthetic dataset straight to a directory.
///
/// # Safety
/// `spec_json` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn wp_synth_write(
    spec_json: *const c_char,
    episodes: usize,
    length: usize,
    out_dir: *const c_char,
) -> WpStatus {
    guard(|| {
        let spec: SynthSystemSpec = parse_json(string(spec_json, "spec_json")?, "spec_json")?;
        generate(&spec, episodes, length, PathBuf::from(string(out_dir, "out_dir")?))?;
        Ok(())
    })
}

/// Load and validate a dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn wp_dataset_load(dir: *const c_char, out: *mut *mut WpDataset) -> WpStatus {
    guard(|| {
        non_null(out, "out")?;
        let ds = load_dataset(string(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(WpDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wp_dataset_write(ds: *const WpDataset, dir: *const c_char) -> WpStatus {
    guard(|| {
        non_null(ds, "ds")?;
        write_dataset(&(*ds).0, string(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `out` a writable `WpDatasetInfo`.
#[no_mangle]
pub unsafe extern "C" fn wp_dataset_info(ds: *const WpDataset, out: *mut WpDatasetInfo) -> WpStatus {
    guard(|| {
        non_null(ds, "ds")?;
        non_null(out, "out")?;
        let d = &(*ds).0;
        *out = WpDatasetInfo {
            episodes: d.episodes.len(),
            total_steps: d.total_steps(),
            embed_dim: d.embed_dim,
            patch_count: d.patch_count,
            layer_count: d.layers.len(),
        };
        Ok(())
    })
}

/// Release a dataset handle. Null is ignored.
///
/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wp_dataset_free(ds: *mut WpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fit an EDMD Koopman matrix on `m` state pairs `x[i] -> y[i]` of dimension
/// `dim`, `k` steps apart. `basis_json` describes the dictionary, e.g.
/// `{"kind": "fourier_torus", "m": 3}`.
///
/// # Safety
/// `x` and `y` must point to `m * dim` doubles; `basis_json` must be a
/// NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn wp_koopman_fit(
    basis_json: *const c_char,
    x: *const f64,
    y: *const f64,
    m: usize,
    dim: usize,
    k: usize,
    out: *mut *mut WpKoopman,
) -> WpStatus {
    guard(|| {
        non_null(out, "out")?;
        let basis: ObservableBasis = parse_json(string(basis_json, "basis_json")?, "basis_json")?;
        let est = edmd_fit(matrix(x, m, dim, "x")?, matrix(y, m, dim, "y")?, &basis, k)?;
        *out = Box::into_raw(Box::new(WpKoopman(est)));
        Ok(())
    })
}

/// Number of observables `N` in the fitted dictionary.
///
/// # Safety
/// `model` must be a live handle; `out` a writable size.
#[no_mangle]
pub unsafe extern "C" fn wp_koopman_size(model: *const WpKoopman, out: *mut usize) -> WpStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).0.a.nrows();
        Ok(())
    })
}

/// Copy the `[N x N]` Koopman matrix into `out`, row-major.
///
/// # Safety
/// `model` must be a live handle; `out` must hold `N * N` doubles.
#[no_mangle]
pub unsafe extern "C" fn wp_koopman_matrix(model: *const WpKoopman, out: *mut f64) -> WpStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let a = &(*model).0.a;
        let dst = std::slice::from_raw_parts_mut(out, a.len());
        for (d, s) in dst.iter_mut().zip(a.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Push dictionary coefficients of an observable `steps` applications of
/// the fitted operator forward.
///
/// # Safety
/// `model` must be a live handle; `coeffs` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn wp_koopman_k_step(
    model: *const WpKoopman,
    coeffs: *const f64,
    n: usize,
    steps: u32,
    out: *mut f64,
) -> WpStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let c = ArrayView1::from(slice(coeffs, n, "coeffs")?);
        let pushed = k_step(&(*model).0, c, steps)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(pushed.as_slice().expect("contiguous"));
        Ok(())
    })
}

/// Release a Koopman handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wp_koopman_free(model: *mut WpKoopman) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
