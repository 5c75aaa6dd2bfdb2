use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trslds::io::*;
use trslds::linalg::Vector;
use trslds::model::{ObservationKind, Trial};
use trslds::synthetic::{fhn_emission, observe, simulate_fhn, FhnSpec};
use trslds::Error;

fn dataset() -> Vec<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = simulate_fhn(&FhnSpec { trajectories: 3, points: 20, ..Default::default() }, &mut rng).unwrap();
    observe(&data.x, &fhn_emission(), &mut rng).unwrap()
}

fn provenance() -> Provenance {
    Provenance { generator: "fhn".into(), seed: 1, params: serde_json::json!({"n": 3}) }
}

#[test]
fn trial_file_round_trip_is_lossless_and_stable() {
    let trials = dataset();
    let file = TrialFile::new(ObservationKind::Gaussian, &trials, provenance()).unwrap();
    let dir = std::env::temp_dir().join(format!("trslds-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let a = dir.join("a.json");
    let b = dir.join("b.json");
    file.write(&a).unwrap();
    let back = TrialFile::read(&a).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.to_trials().unwrap(), trials);
    back.write(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn trial_file_rejects_malformed_documents() {
    let file = TrialFile::new(ObservationKind::Gaussian, &dataset(), provenance()).unwrap();
    let mut v = serde_json::to_value(&file).unwrap();
    v["schema_version"] = 2.into();
    assert!(matches!(TrialFile::parse(&v.to_string()), Err(Error::Schema(_))));
    v.as_object_mut().unwrap().remove("schema_version");
    assert!(matches!(TrialFile::parse(&v.to_string()), Err(Error::Schema(_))));

    let mut ragged = file.clone();
    ragged.trials[0].y[3].push(1.0);
    assert!(ragged.validate().is_err());
    let mut short = file.clone();
    short.trials[1].len += 1;
    assert!(short.validate().is_err());
    let mut dup = file.clone();
    dup.trials[1].id = dup.trials[0].id;
    assert!(dup.validate().is_err());
    let mut coins = file.clone();
    coins.kind = ObservationKind::Bernoulli;
    assert!(coins.validate().is_err());
    for t in &mut coins.trials {
        for r in &mut t.y {
            for x in r.iter_mut() {
                *x = if *x > 0.5 { 1.0 } else { 0.0 };
            }
        }
    }
    coins.validate().unwrap();
}

#[test]
fn run_config_names_missing_fields() {
    let ok = r#"{"model": {"num_leaves": 4, "d_x": 2}, "gibbs": {"num_iterations": 10, "burn_in": 5}}"#;
    let cfg = RunConfig::parse(ok).unwrap();
    assert_eq!(cfg.eval.k_max, 30);
    assert_eq!(cfg.model.topology, TopologyKind::Tree);
    let missing = r#"{"model": {"num_leaves": 4}, "gibbs": {}}"#;
    let err = RunConfig::parse(missing).unwrap_err().to_string();
    assert!(err.contains("d_x"), "{err}");
    let err = RunConfig::parse(r#"{"model": {"num_leaves": 4, "d_x": 2}}"#).unwrap_err().to_string();
    assert!(err.contains("gibbs"), "{err}");
    let typo = r#"{"model": {"num_leaves": 4, "d_x": 2, "leaves": 3}, "gibbs": {}}"#;
    assert!(RunConfig::parse(typo).unwrap_err().to_string().contains("leaves"));
    let bad = r#"{"model": {"num_leaves": 4, "d_x": 2, "priors": {"tau": -1}}, "gibbs": {}}"#;
    assert!(RunConfig::parse(bad).unwrap_err().to_string().contains("tau"));
    let burn = r#"{"model": {"num_leaves": 4, "d_x": 2}, "gibbs": {"num_iterations": 5, "burn_in": 5}}"#;
    assert!(matches!(RunConfig::parse(burn), Err(Error::InvalidArgument(_))));
}

#[test]
fn model_file_round_trip_and_checks() {
    let trials = dataset();
    let cfg = RunConfig::parse(
        r#"{"model": {"num_leaves": 2, "d_x": 2}, "gibbs": {"num_iterations": 4, "burn_in": 2, "seed": 3},
            "init": {"epochs": 20}}"#,
    )
    .unwrap();
    let fit = cfg.fit(&trials, ObservationKind::Gaussian).unwrap();
    assert_eq!(fit.record.samples.len(), 2);
    let file = ModelFile::new("trslds", ObservationKind::Gaussian, cfg.clone(), &trials, fit.clone());
    let text = serde_json::to_string(&file).unwrap();
    let back = ModelFile::parse(&text).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.samples().len(), 2);
    // Same configuration, same fit.
    assert!(cfg.fit(&trials, ObservationKind::Gaussian).unwrap().record.same_draws(&fit.record));

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["schema_version"] = 9.into();
    assert!(matches!(ModelFile::parse(&v.to_string()), Err(Error::Schema(_))));
    let mut empty = file.clone();
    empty.record.samples.clear();
    assert!(ModelFile::parse(&serde_json::to_string(&empty).unwrap()).is_err());
}

#[test]
fn truth_file_keeps_states() {
    let x = vec![vec![Vector::from_column_slice(&[1.0, 2.0]), Vector::from_column_slice(&[0.5, -0.25])]];
    let f = TruthFile::new(&[7], &x, Some(&[vec![1]]));
    let back: TruthFile = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
    assert_eq!(back.states(0), x[0]);
    assert_eq!(back.trials[0].z, Some(vec![1]));
}
