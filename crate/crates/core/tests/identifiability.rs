use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trslds::identifiability::*;
use trslds::linalg::Vector;
use trslds::model::{log_joint_terms, sample_prior_params, simulate, LatentState, ModelParams, ObservationKind, PriorConfig, Trial};
use trslds::stick_breaking::tree_leaf_probs;
use trslds::tree::TreeTopology;

fn setup(seed: u64, kind: ObservationKind) -> (ModelParams, Vec<Trial>, Vec<LatentState>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = TreeTopology::build(4).unwrap();
    let priors = PriorConfig { tau: 0.3, ..Default::default() }.build(2, 4).unwrap();
    let p = sample_prior_params(&priors, &t, kind, &mut rng).unwrap();
    let sim = simulate(&p, &Vector::from_column_slice(&[0.2, -0.1]), 20, &mut rng).unwrap();
    (p, vec![Trial::new(0, sim.y)], vec![LatentState::new(sim.x, sim.z)])
}

#[test]
fn invariant_predictions_and_triangular_output() {
    for seed in 0..10 {
        let (mut p, trials, mut lats) = setup(seed, ObservationKind::Gaussian);
        let before = log_joint_terms(&p, &trials, &lats).unwrap();
        let (p0, l0) = (p.clone(), lats.clone());
        let out = normalize_rotation(&mut p, &mut lats);
        let NormalizeOutcome::Applied { log_det, .. } = out else { panic!("skipped") };
        let after = log_joint_terms(&p, &trials, &lats).unwrap();
        let steps = trials[0].len() as f64;
        assert!((after.data_terms() + steps * log_det - before.data_terms()).abs() < 1e-8);
        for t in 0..lats[0].x.len() {
            let m0 = p0.emission.mean(&l0[0].x[t]);
            assert!((p.emission.mean(&lats[0].x[t]) - m0).amax() < 1e-10);
            let g0 = tree_leaf_probs(&l0[0].x[t], &p0.hyperplanes, &p0.topology).probabilities;
            let g1 = tree_leaf_probs(&lats[0].x[t], &p.hyperplanes, &p.topology).probabilities;
            for (a, b) in g0.iter().zip(&g1) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert!(p.emission.c[(1, 0)].abs() < 1e-10);
        for col in p.emission.c.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn idempotent_and_fixed_point() {
    let (mut p, _, mut lats) = setup(3, ObservationKind::Bernoulli);
    normalize_rotation(&mut p, &mut lats);
    let (p1, l1) = (p.clone(), lats.clone());
    normalize_rotation(&mut p, &mut lats);
    assert!((&p.emission.c - &p1.emission.c).amax() < 1e-10);
    for (a, b) in p.dynamics.iter().zip(&p1.dynamics) {
        assert!((&a.a - &b.a).amax() < 1e-10 && (&a.b - &b.b).amax() < 1e-10);
    }
    assert!((&lats[0].x[5] - &l1[0].x[5]).amax() < 1e-10);
}

#[test]
fn rank_deficient_is_skipped() {
    let (mut p, _, mut lats) = setup(1, ObservationKind::Gaussian);
    p.emission.c.set_column(1, &(p.emission.c.column(0) * 2.0));
    let c = p.emission.c.clone();
    assert!(!normalize_rotation(&mut p, &mut lats).applied());
    assert_eq!(p.emission.c, c);
}
