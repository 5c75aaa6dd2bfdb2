use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trslds::io::{ModelFile, TrialFile};
use trslds::linalg::Vector;
use trslds::Hyperplane;
use trslds::NodeId;

fn trslds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trslds")).args(args).env_remove("TRSLDS_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = trslds(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn config_path(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    p.to_str().unwrap().to_string()
}

fn read_csv(p: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (path(dir.path(), "a.json"), path(dir.path(), "b.json"), path(dir.path(), "c.json"));
    ok(&["simulate", "nascar", "--T", "200", "--seed", "7", "--out", &a]);
    ok(&["simulate", "nascar", "--T", "200", "--seed", "7", "--out", &b]);
    ok(&["simulate", "nascar", "--T", "200", "--seed", "8", "--out", &c]);
    let read = |p: &str| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&path(dir.path(), "a.truth.json")), read(&path(dir.path(), "b.truth.json")));
    assert_ne!(read(&a), read(&c));

    // Reading and rewriting a dataset is lossless.
    let again = path(dir.path(), "again.json");
    TrialFile::read(Path::new(&a)).unwrap().write(Path::new(&again)).unwrap();
    assert_eq!(read(&a), read(&again));
}

#[test]
fn fixture_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let fhn = path(dir.path(), "fhn.json");
    ok(&["simulate", "fhn", "--n", "100", "--T", "430", "--seed", "1", "--out", &fhn]);
    let f = TrialFile::read(Path::new(&fhn)).unwrap();
    assert_eq!((f.trials.len(), f.d_y), (100, 2));
    assert!(f.trials.iter().all(|t| t.len == 430 && t.y.len() == 430));
    assert_eq!(f.provenance.generator, "fhn");

    let lorenz = path(dir.path(), "lorenz.json");
    ok(&["simulate", "lorenz", "--n", "50", "--T", "230", "--out", &lorenz]);
    let f = TrialFile::read(Path::new(&lorenz)).unwrap();
    assert_eq!((f.trials.len(), f.d_y), (50, 10));
    assert!(f.trials.iter().all(|t| t.y.len() == 230));

    let bern = path(dir.path(), "bern.json");
    ok(&["simulate", "bernoulli", "--n", "3", "--T", "20", "--d-y", "6", "--out", &bern]);
    let f = TrialFile::read(Path::new(&bern)).unwrap();
    assert_eq!((f.trials.len(), f.d_y), (3, 6));
    assert!(f.trials.iter().flat_map(|t| t.y.iter().flatten()).all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn validation_errors_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "cfg.json");
    std::fs::write(&cfg, r#"{"model": {"num_leaves": 2, "d_x": 2}}"#).unwrap();
    let model = path(dir.path(), "model.json");
    // The data file does not exist: the config must be rejected first.
    let out = trslds(&["fit", "--data", "missing.json", "--config", &cfg, "--out", &model]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gibbs"), "{err}");
    assert!(!Path::new(&model).exists());

    std::fs::write(&cfg, r#"{"model": {"num_leaves": 2, "d_x": 2}, "gibbs": {"burn_in": 5, "num_iterations": 3}}"#).unwrap();
    let out = trslds(&["fit", "--data", "missing.json", "--config", &cfg, "--out", &model]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gibbs.burn_in"));

    let out = trslds(&["eval", "--model", &path(dir.path(), "nope.json"), "--data", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    assert_eq!(trslds(&["simulate", "fhn", "--d-y", "3", "--out", &model]).status.code(), Some(2));
    assert_eq!(trslds(&["simulate", "warp", "--out", &model]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_trslds"))
        .args(["simulate", "nascar", "--out", &model])
        .env("TRSLDS_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lds_fit_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "lds.json");
    ok(&["simulate", "lds", "--seed", "3", "--out", &data]);
    let cfg = config_path("lds.json");
    let (m1, m2) = (path(dir.path(), "m1.json"), path(dir.path(), "m2.json"));
    ok(&["fit", "--data", &data, "--config", &cfg, "--out", &m1, "--holdout", "10", "--quiet"]);
    ok(&["fit", "--data", &data, "--config", &cfg, "--out", &m2, "--holdout", "10", "--quiet"]);
    let model = ModelFile::read(Path::new(&m1)).unwrap();
    let repeat = ModelFile::read(Path::new(&m2)).unwrap();
    // Wall-clock times aside, repeated fits are identical.
    assert!(model.record.same_draws(&repeat.record));
    assert_eq!(model.state, repeat.state);

    assert_eq!(model.record.samples.len(), 20);
    assert!(model.state.latents.iter().all(|l| l.len() == 90));

    let report = path(dir.path(), "report");
    ok(&["eval", "--model", &m1, "--data", &data, "--out", &report]);
    let (header, rows) = read_csv(&format!("{report}.csv"));
    assert_eq!(header, ["k", "mse", "r2", "model", "seed"]);
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0][0], "1");
    assert_eq!(rows[0][3], "trslds");
    let r2_1 = num(&rows[0][2]);
    assert!(r2_1 > 0.95, "R²₁ = {r2_1}");

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{report}.json")).unwrap()).unwrap();
    assert_eq!(json["k_max"], 10);
    assert_eq!(json["per_trial"].as_array().unwrap().len(), 10);
    assert!((json["r2"][0].as_f64().unwrap() - r2_1).abs() < 1e-12);
}

/// Fits a two-leaf model briefly and makes its root gate sharp along `x₁`.
fn two_leaf_model(dir: &Path) -> (String, ModelFile) {
    let data = path(dir, "lds.json");
    ok(&["simulate", "lds", "--n", "3", "--T", "40", "--seed", "5", "--out", &data]);
    let cfg = path(dir, "k2.json");
    std::fs::write(&cfg, r#"{"model": {"num_leaves": 2, "d_x": 2}, "gibbs": {"num_iterations": 6, "burn_in": 3}}"#).unwrap();
    let m = path(dir, "k2-model.json");
    ok(&["fit", "--data", &data, "--config", &cfg, "--out", &m, "--quiet"]);
    let mut model = ModelFile::read(Path::new(&m)).unwrap();
    for s in &mut model.record.samples {
        s.params.hyperplanes.set(NodeId::ROOT, Hyperplane::new(Vector::from_column_slice(&[1000.0, 0.0]), 0.0));
    }
    model.write(Path::new(&m)).unwrap();
    (m, model)
}

#[test]
fn vector_field_depths() {
    let dir = tempfile::tempdir().unwrap();
    let (m, model) = two_leaf_model(dir.path());
    let params = &model.record.best().unwrap().params;
    let field = path(dir.path(), "field.csv");
    ok(&["export", "--model", &m, "vector-field", "--out", &field, "--grid", "1,2,-1,1", "--nx", "4", "--ny", "3"]);
    let (header, rows) = read_csv(&field);
    assert_eq!(header, ["depth", "x1", "x2", "dx1", "dx2"]);
    assert_eq!(rows.len(), 2 * 12);
    let root = &params.dynamics[NodeId::ROOT.0];
    let leaf = params.leaf_dynamics(0);
    for r in &rows {
        let x = Vector::from_column_slice(&[num(&r[1]), num(&r[2])]);
        let drift = Vector::from_column_slice(&[num(&r[3]), num(&r[4])]);
        // Depth 0 is the single global system; at x₁ ≥ 1 the sharp gate sends
        // all mass to the left leaf.
        let expect = if r[0] == "0" { &root.a * &x + &root.b } else { &leaf.a * &x + &leaf.b };
        assert!((drift - expect).amax() < 1e-9, "{r:?}");
    }
    // Row-major grid, x₁ varying fastest.
    assert_eq!((num(&rows[0][1]), num(&rows[1][1]), num(&rows[0][2])), (1.0, 1.0 + 1.0 / 3.0, -1.0));
    assert!(trslds(&["export", "--model", &m, "vector-field", "--out", &field, "--depth", "2"]).status.code() == Some(2));

    let parts = path(dir.path(), "parts.csv");
    ok(&["export", "--model", &m, "partitions", "--out", &parts, "--grid", "-2,-1,-1,1", "--nx", "2", "--ny", "2"]);
    let (header, rows) = read_csv(&parts);
    assert_eq!(header, ["x1", "x2", "p0", "p1"]);
    assert!(rows.iter().all(|r| num(&r[2]) < 1e-12 && (num(&r[3]) - 1.0).abs() < 1e-12));
}

#[test]
fn trace_and_trajectory_exports() {
    let dir = tempfile::tempdir().unwrap();
    let (m, model) = two_leaf_model(dir.path());
    let trace = path(dir.path(), "trace.csv");
    ok(&["export", "--model", &m, "trace", "--out", &trace, "--window", "2"]);
    let (header, rows) = read_csv(&trace);
    assert_eq!(header, ["iteration", "log_joint", "trailing_mean"]);
    let lj = &model.record.log_joint;
    assert_eq!(rows.len(), lj.len());
    for (i, r) in rows.iter().enumerate() {
        let lo = i.saturating_sub(1);
        let mean = lj[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
        assert_eq!(num(&r[1]), lj[i]);
        assert!((num(&r[2]) - mean).abs() < 1e-9 * mean.abs());
    }

    let traj = path(dir.path(), "traj.csv");
    ok(&["export", "--model", &m, "trajectories", "--out", &traj]);
    let (header, rows) = read_csv(&traj);
    assert_eq!(header, ["trial", "t", "z", "x1", "x2"]);
    assert_eq!(rows.len(), 3 * 41);
    assert_eq!(rows[0][2], "");
    assert!(rows[1][2] == "0" || rows[1][2] == "1");
    assert_eq!(num(&rows[41][3]), model.state.latents[1].x[0][0]);
}

#[test]
fn geweke_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = path(dir.path(), "geweke.json");
    let out = ok(&["geweke", "--rounds", "100", "--seed", "1", "--out", &out_path]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 22);
    assert!(text.lines().last().unwrap().starts_with("max |z|"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(json["functionals"].as_array().unwrap().len(), 20);
}
