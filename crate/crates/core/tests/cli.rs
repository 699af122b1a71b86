use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const JOB: &str = r#"{
  "system": {"kind": "noisy_drift", "state_dim": 4, "activation_dim": 16, "patch_count": 4,
             "drift_scale": 0.02, "obs_noise": 0.4, "act_noise": 0.05, "informative": true,
             "seed": 11, "name": "toy"},
  "episodes": 3,
  "length": 120
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_worldprobe"));
    c.env_remove("WORLDPROBE_SEED");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth_toy(dir: &Path) -> PathBuf {
    fs::write(dir.join("job.json"), JOB).unwrap();
    let out = run(&["synth", "job.json", "--out", "toy"], dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("toy")
}

/// Relative path to file contents for every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const FAST: &[&str] = &[
    "--ks",
    "1,10",
    "--sweep-epochs",
    "5",
    "--final-epochs",
    "20",
    "--n-reps",
    "50",
];

#[test]
fn invalid_synth_spec_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\"system\": ").unwrap();
    let out = run(&["synth", "bad.json", "--out", "x"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_toy(dir.path());
    let again = run(&["synth", "job.json", "--out", "toy2"], dir.path());
    assert_eq!(code(&again), 0);
    let (sa, sb) = (snapshot(&a), snapshot(&dir.path().join("toy2")));
    assert!(sa.len() >= 3);
    assert_eq!(sa, sb);
    let check = run(&["ingest-check", "toy", "--ks", "1"], dir.path());
    assert_eq!(code(&check), 0);
    let summary: Value = serde_json::from_slice(&check.stdout).unwrap();
    assert_eq!(summary["total_steps"], 360);
}

#[test]
fn seed_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("job.json"), JOB).unwrap();
    let env = bin()
        .args(["synth", "job.json", "--out", "env"])
        .env("WORLDPROBE_SEED", "5")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&env), 0);
    let flag = bin()
        .args(["--seed", "5", "synth", "job.json", "--out", "flag"])
        .env("WORLDPROBE_SEED", "6")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&flag), 0);
    let plain = run(&["synth", "job.json", "--out", "plain"], dir.path());
    assert_eq!(code(&plain), 0);
    let s = |n: &str| snapshot(&dir.path().join(n));
    assert_eq!(s("env"), s("flag"));
    assert_ne!(s("env"), s("plain"));
    let bad = bin()
        .args(["synth", "job.json", "--out", "bad"])
        .env("WORLDPROBE_SEED", "minus one")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn probe_rows_are_complete_and_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let mut outputs = Vec::new();
    for (name, threads) in [("run1", "1"), ("run3", "3")] {
        let mut args = vec!["--threads", threads, "probe", "--dataset", "toy", "--output", name];
        args.extend_from_slice(FAST);
        let out = run(&args, dir.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(snapshot(&dir.path().join(name)));
    }
    // config.json records the thread cap; everything else must agree.
    for snap in &mut outputs {
        snap.remove(Path::new("config.json"));
    }
    assert_eq!(outputs[0], outputs[1]);

    let csv = String::from_utf8(outputs[0][Path::new("probe/results.csv")].clone()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dataset,K,train_r2,train_std,test_r2,test_std,lr,lambda,dropout,probe_type"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // 2 horizons x 3 feature streams x 2 kinds.
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert_eq!(r.len(), 10);
        for (i, cell) in r.iter().enumerate() {
            let optional = i == 8 && r[9].starts_with("Linear");
            assert!(optional || !cell.is_empty(), "empty column {i} in {r:?}");
        }
    }
    assert!(rows.iter().any(|r| r[9] == "Linear-Joint-L15"));
}

#[test]
fn one_cell_config_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    fs::write(
        dir.path().join("config.json"),
        r#"{"datasets": ["toy"], "ks": [3], "kinds": ["linear"], "modes": ["embeddings"],
            "train": {"sweep_epochs": 5, "final_epochs": 10}, "stats": {"n_reps": 20}, "output": "one"}"#,
    )
    .unwrap();
    let out = run(&["probe", "--config", "config.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("one/probe/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().ends_with(",Linear-Embedding"));
}

#[test]
fn unknown_config_key_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.json"), r#"{"datasets": [], "colour": "red"}"#).unwrap();
    let out = run(&["probe", "--config", "config.json"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn permtest_without_probe_results_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let out = run(&["permtest", "--dataset", "toy", "--output", "empty"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing prior probe results"));
}

#[test]
fn report_flags_missing_sections_and_still_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let mut args = vec!["probe", "--dataset", "toy", "--output", "run", "--modes", "activations,embeddings"];
    args.extend_from_slice(FAST);
    assert_eq!(code(&run(&args, dir.path())), 0);
    assert_eq!(
        code(&run(&["coherence", "--dataset", "toy", "--output", "run"], dir.path())),
        0
    );
    let out = run(&["report", "run"], dir.path());
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/report/report.json")).unwrap()).unwrap();
    assert_eq!(report["incomplete"], true);
    assert_eq!(report["missing"], serde_json::json!(["allan"]));

    assert_eq!(code(&run(&["allan", "--dataset", "toy", "--output", "run"], dir.path())), 0);
    let first = run(&["report", "run"], dir.path());
    assert_eq!(code(&first), 0);
    let a = fs::read(dir.path().join("run/report/report.json")).unwrap();
    run(&["report", "run"], dir.path());
    let b = fs::read(dir.path().join("run/report/report.json")).unwrap();
    assert_eq!(a, b);
    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["incomplete"], false);
    for section in ["probes", "one_way", "mlp_vs_linear", "grids", "coherence", "allan"] {
        assert!(!report[section].is_null(), "{section}");
    }
    assert!(dir.path().join("run/report/grid_toy.svg").is_file());
}

#[test]
fn report_over_reference_results_reproduces_grid_cell() {
    let dir = tempfile::tempdir().unwrap();
    let probe = dir.path().join("run/probe");
    fs::create_dir_all(&probe).unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference_results.csv");
    fs::copy(fixture, probe.join("results.csv")).unwrap();
    let out = run(&["report", "run"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/report/report.json")).unwrap()).unwrap();
    assert_eq!(report["incomplete"], true);
    let grids = report["grids"].as_array().unwrap();
    assert_eq!(grids.len(), 4);
    let long = grids.iter().find(|g| g["dataset"] == "long (10)").unwrap();
    let layers: Vec<u64> = long["grid"]["layers"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let ks: Vec<u64> = long["grid"]["ks"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let (li, ki) = (
        layers.iter().position(|&l| l == 15).unwrap(),
        ks.iter().position(|&k| k == 30).unwrap(),
    );
    let cell = &long["grid"]["cells"][li][ki];
    assert_eq!(cell["test_r2"].as_f64().unwrap(), 0.5151);
    let csv = fs::read_to_string(dir.path().join("run/report/grid_long__10_.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("15,30,0.5151,")), "{csv}");
}
