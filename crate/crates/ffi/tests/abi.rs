use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use worldprobe_ffi::*;

const SPEC: &str = r#"{"kind": "noisy_drift", "state_dim": 3, "activation_dim": 16, "patch_count": 4,
    "drift_scale": 0.02, "obs_noise": 0.4, "act_noise": 0.05, "informative": true, "seed": 9}"#;

fn last_error() -> String {
    let p = wp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn r2_of_perfect_and_mean_predictions() {
    let y = [1.0, 2.0, 3.0, 5.0, 4.0, 0.0];
    let mut out = f64::NAN;
    unsafe {
        assert_eq!(wp_r2_score(y.as_ptr(), y.as_ptr(), 3, 2, &mut out), WpStatus::Ok);
        assert_eq!(out, 1.0);
        let (a, b) = (8.0 / 3.0, 7.0 / 3.0);
        let mean = [a, b, a, b, a, b];
        assert_eq!(wp_r2_score(y.as_ptr(), mean.as_ptr(), 3, 2, &mut out), WpStatus::Ok);
        assert!(out.abs() < 1e-12);
    }
    assert!(wp_last_error().is_null());
}

#[test]
fn null_and_degenerate_inputs_report_errors() {
    let y = [1.0; 4];
    let mut out = 0.0;
    unsafe {
        assert_eq!(wp_r2_score(ptr::null(), y.as_ptr(), 2, 2, &mut out), WpStatus::NullPointer);
        assert!(last_error().contains("y is null"));
        assert_eq!(wp_r2_score(y.as_ptr(), y.as_ptr(), 2, 2, &mut out), WpStatus::Degenerate);
        assert_eq!(wp_r2_score(y.as_ptr(), y.as_ptr(), 1, 4, &mut out), WpStatus::TooFewSamples);
    }
}

#[test]
fn bootstrap_interval_brackets_point_estimate() {
    let n = 200;
    let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    let yhat: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + 0.3 * (i as f64 * 1.7).cos()).collect();
    let mut a = WpBootstrapResult::default();
    let mut b = WpBootstrapResult::default();
    unsafe {
        assert_eq!(wp_block_bootstrap(y.as_ptr(), yhat.as_ptr(), n, 1, 100, 0.95, 4, &mut a), WpStatus::Ok);
        assert_eq!(wp_block_bootstrap(y.as_ptr(), yhat.as_ptr(), n, 1, 100, 0.95, 4, &mut b), WpStatus::Ok);
        assert_eq!(
            wp_block_bootstrap(y.as_ptr(), yhat.as_ptr(), n, 1, 100, 1.5, 4, &mut b),
            WpStatus::InvalidArgument
        );
    }
    assert!(a.lower < a.r2 && a.r2 < a.upper);
    assert!(a.se > 0.0);
    assert_eq!(a.block_length, 5);
    assert_eq!(a.r2.to_bits(), b.r2.to_bits());
}

#[test]
fn fisher_of_single_p_is_identity() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(wp_fisher_combine([0.2].as_ptr(), 1, &mut out), WpStatus::Ok);
        assert!((out - 0.2).abs() < 1e-12);
        assert_eq!(wp_fisher_combine([0.0].as_ptr(), 1, &mut out), WpStatus::InvalidArgument);
    }
}

#[test]
fn allan_deviation_of_white_noise_is_flat_at_tau_one() {
    // Alternating +-1 increments: every overlapping average over an even
    // window cancels.
    let series: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let taus = [1usize, 2, 4];
    let mut out = [0.0; 3];
    unsafe {
        assert_eq!(
            wp_allan_deviation(series.as_ptr(), series.len(), taus.as_ptr(), 3, out.as_mut_ptr()),
            WpStatus::Ok
        );
    }
    assert!((out[0] - 2f64.sqrt()).abs() < 1e-12);
    assert!(out[1].abs() < 1e-12 && out[2].abs() < 1e-12);
}

#[test]
fn synth_round_trip_through_handles() {
    let spec = CString::new(SPEC).unwrap();
    let mut ds: *mut WpDataset = ptr::null_mut();
    let mut info = WpDatasetInfo::default();
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("toy").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(wp_synth_generate(spec.as_ptr(), 3, 50, &mut ds), WpStatus::Ok);
        assert_eq!(wp_dataset_info(ds, &mut info), WpStatus::Ok);
        assert_eq!(info.episodes, 3);
        assert_eq!(info.total_steps, 150);
        assert_eq!(info.embed_dim, 3);
        assert_eq!(info.layer_count, 1);
        assert_eq!(wp_dataset_write(ds, path.as_ptr()), WpStatus::Ok);
        wp_dataset_free(ds);

        let mut loaded: *mut WpDataset = ptr::null_mut();
        assert_eq!(wp_dataset_load(path.as_ptr(), &mut loaded), WpStatus::Ok);
        let mut again = WpDatasetInfo::default();
        assert_eq!(wp_dataset_info(loaded, &mut again), WpStatus::Ok);
        assert_eq!(again.total_steps, 150);
        wp_dataset_free(loaded);
        wp_dataset_free(ptr::null_mut());
    }
}

#[test]
fn synth_rejects_bad_json() {
    let bad = CString::new("{\"kind\": ").unwrap();
    let mut ds: *mut WpDataset = ptr::null_mut();
    unsafe {
        assert_eq!(wp_synth_generate(bad.as_ptr(), 1, 10, &mut ds), WpStatus::Parse);
    }
    assert!(ds.is_null());
    assert!(last_error().starts_with("spec_json"));
}

#[test]
fn koopman_fit_recovers_torus_rotation() {
    // Fourier modes on the circle rotate exactly under x -> x + alpha.
    let alpha = 0.25;
    let m = 64;
    let x: Vec<f64> = (0..m).map(|i| (i as f64 * 0.6180339887).fract()).collect();
    let y: Vec<f64> = x.iter().map(|v| (v + alpha).fract()).collect();
    let basis = CString::new(r#"{"kind": "fourier_torus", "m": 1}"#).unwrap();
    let mut model: *mut WpKoopman = ptr::null_mut();
    let mut n = 0usize;
    unsafe {
        assert_eq!(wp_koopman_fit(basis.as_ptr(), x.as_ptr(), y.as_ptr(), m, 1, 1, &mut model), WpStatus::Ok);
        assert_eq!(wp_koopman_size(model, &mut n), WpStatus::Ok);
        assert_eq!(n, 3);
        let mut a = vec![0.0; n * n];
        assert_eq!(wp_koopman_matrix(model, a.as_mut_ptr()), WpStatus::Ok);
        // Four quarter turns return every coefficient vector to itself.
        let c = [0.3, -1.0, 2.0];
        let mut out = [0.0; 3];
        assert_eq!(wp_koopman_k_step(model, c.as_ptr(), 3, 4, out.as_mut_ptr()), WpStatus::Ok);
        for (o, e) in out.iter().zip(c) {
            assert!((o - e).abs() < 1e-9, "{out:?}");
        }
        assert_eq!(wp_koopman_k_step(model, c.as_ptr(), 2, 1, out.as_mut_ptr()), WpStatus::ShapeMismatch);
        wp_koopman_free(model);
    }
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(wp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("worldprobe.h")
}

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "wp_last_error",
        "wp_version",
        "wp_r2_score",
        "wp_block_bootstrap",
        "wp_fisher_combine",
        "wp_allan_deviation",
        "wp_synth_generate",
        "wp_synth_write",
        "wp_dataset_load",
        "wp_dataset_write",
        "wp_dataset_info",
        "wp_dataset_free",
        "wp_koopman_fit",
        "wp_koopman_size",
        "wp_koopman_matrix",
        "wp_koopman_k_step",
        "wp_koopman_free",
        "typedef struct WpDataset WpDataset",
        "WP_STATUS_PANIC = 8",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"worldprobe.h\"\n\
         int main(void) {\n\
           double y[4] = {1, 2, 3, 4}; double r2 = 0;\n\
           WpStatus s = wp_r2_score(y, y, 4, 1, &r2);\n\
           return s == WP_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
