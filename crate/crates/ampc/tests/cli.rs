//! The `ampc` binary on small scalar runs.
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ampc::manifest::{self, Manifest};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ampc")).args(args).env_remove("AMPC_SEED").output().unwrap()
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(o.status.success(), "ampc {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

/// Dataset, exact value and both policies in `dir`.
fn scalar_artifacts(dir: &Path, n: &str, seed: &str) {
    ok(&["gen-data", "--experiment", "quad1d", "--n", n, "--seed", seed, "--out", p(&dir.join("data"))]);
    ok(&["fit-value", "--exact-value", "--experiment", "quad1d", "--out", p(&dir.join("value"))]);
    for m in ["il", "bc"] {
        ok(&["fit-policy", "--method", m, "--data", p(&dir.join("data")), "--value", p(&dir.join("value")), "--out", p(&dir.join(m))]);
    }
}

#[test]
fn gen_data_is_sized_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen-data", "--experiment", "quad1d", "--n", "50", "--seed", "1", "--out", p(&a)]);
    ok(&["gen-data", "--experiment", "quad1d", "--n", "50", "--seed", "1", "--workers", "3", "--out", p(&b)]);
    assert_eq!(rows(&a.join("dataset.csv")), 50);
    for f in ["dataset.csv", "dataset.json", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // The seed can come from the environment as well.
    let c = tmp.path().join("c");
    let o = Command::new(env!("CARGO_BIN_EXE_ampc"))
        .args(["gen-data", "--experiment", "quad1d", "--n", "50", "--out", p(&c)])
        .env("AMPC_SEED", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(a.join("dataset.csv")).unwrap(), fs::read(c.join("dataset.csv")).unwrap());
}

#[test]
fn flagged_rows_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    // x^2 overflows for these states, so every solve fails.
    fs::write(&cfg, r#"{"plan": {"kind": "uniform_box", "lo": [1e200], "hi": [2e200], "n": 3}}"#).unwrap();
    let o = run(&["gen-data", "--config", p(&cfg), "--experiment", "quad1d", "--out", p(&tmp.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    let text = fs::read_to_string(tmp.path().join("d/dataset.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",1")));
}

#[test]
fn missing_inputs_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let o = run(&["fit-policy", "--method", "bc", "--data", p(&missing), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(p(&missing)));
    let o = run(&["evaluate", "--value", p(&missing), "--out", p(&tmp.path().join("y"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn scalar_pipeline_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    scalar_artifacts(d, "200", "3");

    let value = manifest::load(&d.join("value"), "value").unwrap();
    assert_eq!(value.meta["value_kind"], "quadratic");
    assert!(d.join("value/quadratic.json").exists());

    let il = manifest::load(&d.join("il"), "policy").unwrap();
    let bc = manifest::load(&d.join("bc"), "policy").unwrap();
    assert_eq!((il.meta["method"].as_str(), bc.meta["method"].as_str()), (Some("il"), Some("bc")));
    assert_ne!(il.id, bc.id);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("il/metrics.json")).unwrap()).unwrap();
    assert!(metrics["final_loss"].as_f64().unwrap().is_finite());
    assert!(rows(&d.join("il/curve.csv")) > 0);
    assert!(d.join("il/audits.json").exists());

    let cfg = d.join("suite.json");
    fs::write(&cfg, r#"{"suite": {"n_traj": 5, "steps": 10, "start_lo": [-1.0], "start_hi": [1.0]}}"#).unwrap();
    ok(&["evaluate", "--config", p(&cfg), "--value", p(&d.join("value")), "--il", p(&d.join("il")), "--bc", p(&d.join("bc")), "--out", p(&d.join("eval"))]);
    let table = fs::read_to_string(d.join("eval/table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,perf,p_t,p_c,eval_time,violations");
    let methods: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["il", "bc", "pistar"]);

    ok(&["report", "--il", p(&d.join("il")), "--bc", p(&d.join("bc")), "--value", p(&d.join("value")), "--out", p(&d.join("report"))]);
    assert_eq!(rows(&d.join("report/fig1_policies.csv")), 401);
    let m = manifest::load(&d.join("report"), "report").unwrap();
    assert_eq!(m.inputs["il"], il.id);

    ok(&["simulate", "--policy", p(&d.join("il")), "--x0", "0.9", "--x0", "-0.4", "--steps", "20", "--out", p(&d.join("sim"))]);
    assert_eq!(rows(&d.join("sim/trajectories.csv")), 2 * 21);
}

#[test]
fn consistency_has_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    ok(&["consistency", "--ns", "10,20", "--seeds", "0,1,2", "--interval", "-1,1", "--out", p(&out)]);
    let text = fs::read_to_string(out.join("consistency.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "method,n_s,seed,mean_dist,sup_dist,max_abs_u,final_loss");
    assert_eq!(rows(&out.join("consistency.csv")), 2 * 2 * 3);
}

#[test]
fn report_refuses_mixed_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    scalar_artifacts(&a, "60", "1");
    scalar_artifacts(&b, "60", "2");
    let o = run(&["report", "--il", p(&a.join("il")), "--bc", p(&b.join("bc")), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("provenance"));
    // Tampering with a manifest-covered file is caught as well.
    fs::write(a.join("bc/policy.json"), "{}").unwrap();
    let o = run(&["report", "--il", p(&a.join("il")), "--bc", p(&a.join("bc")), "--out", p(&tmp.path().join("r2"))]);
    assert_eq!(o.status.code(), Some(1));
    let m: Manifest = serde_json::from_str(&fs::read_to_string(a.join("il/manifest.json")).unwrap()).unwrap();
    m.verify_id().unwrap();
}
