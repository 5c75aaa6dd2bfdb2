use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trslds::conjugate::*;
use trslds::error::Error;
use trslds::linalg::{std_normal_vec, vec_of, Mat, Vector};
use trslds::model::{EmissionPrior, LatentState, NodeDynamics, NoisePrior, PriorConfig, Trial};
use trslds::tree::{NodeId, TreeTopology};

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

#[test]
fn no_data_gives_prior() {
    let stats = SufficientStats::new(2, 2);
    let mean = v(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let cov = Mat::identity(6, 6) * 0.3;
    let post = leaf_dynamics_posterior(&mean, &cov, &stats, &Mat::identity(2, 2)).unwrap();
    assert!((post.mean().unwrap() - &mean).amax() < 1e-12);
    assert!((post.cov().unwrap() - &cov).amax() < 1e-12);
    let prior = NoisePrior { df: 4.0, scale: Mat::identity(2, 2) };
    let (df, scale) = noise_posterior(&NodeDynamics::zeros(2), &stats, &prior);
    assert_eq!((df, scale), (4.0, Mat::identity(2, 2)));
}

#[test]
fn flat_prior_matches_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = NodeDynamics::new(Mat::from_row_slice(2, 2, &[-0.1, 0.3, -0.2, 0.05]), v(&[0.4, -0.7]));
    let mut x = vec![v(&[1.0, 0.5])];
    for _ in 0..60 {
        let last = x.last().unwrap();
        x.push(truth.step(last) + std_normal_vec(2, &mut rng) * 0.1);
    }
    let lat = LatentState::new(x.clone(), vec![0; 60]);
    let stats = leaf_stats(0, &[lat], 2);
    let post = leaf_dynamics_posterior(&Vector::zeros(6), &(Mat::identity(6, 6) * 1e14), &stats, &Mat::identity(2, 2))
        .unwrap();
    // Ordinary least squares W = S_yx S_xx⁻¹.
    let ols = &stats.yx * stats.xx.clone().try_inverse().unwrap();
    assert!((post.mean().unwrap() - vec_of(&ols)).amax() < 1e-8);
}

#[test]
fn noiseless_leaf_concentrates() {
    let a = 0.5;
    let mut x = vec![v(&[1.0])];
    for _ in 0..30 {
        let last = x.last().unwrap()[0];
        x.push(v(&[last + a * last]));
    }
    let stats = leaf_stats(0, &[LatentState::new(x, vec![0; 30])], 1);
    let post = leaf_dynamics_posterior(&Vector::zeros(2), &(Mat::identity(2, 2) * 1e8), &stats, &(Mat::identity(1, 1) * 1e-8))
        .unwrap();
    let m = post.mean().unwrap();
    assert!((m[0] - 0.5).abs() < 1e-6 && m[1].abs() < 1e-6);
}

#[test]
fn internal_node_examples() {
    let p = v(&[1.0, -2.0]);
    let cov = Mat::identity(2, 2);
    let post = internal_posterior(&p, &cov, &[(p.clone(), cov.clone()), (p.clone(), cov.clone() * 0.5)]).unwrap();
    assert!((post.mean().unwrap() - &p).amax() < 1e-12);
    let (cl, cr) = (v(&[3.0, 0.0]), v(&[-1.0, 4.0]));
    let post = internal_posterior(&p, &cov, &[(cl.clone(), cov.clone()), (cr.clone(), cov.clone())]).unwrap();
    assert!((post.mean().unwrap() - (&p + &cl + &cr) / 3.0).amax() < 1e-12);
    // precision is exactly the sum of contributing precisions
    let post = internal_posterior(&p, &(cov.clone() * 2.0), &[(cl, cov.clone() * 0.5), (cr, cov.clone() * 0.25)]).unwrap();
    assert!((post.precision - Mat::identity(2, 2) * (0.5 + 2.0 + 4.0)).amax() < 1e-12);
}

#[test]
fn emission_noiseless_regression() {
    let xs: Vec<Vector> = (0..=20).map(|t| v(&[t as f64 * 0.1 - 1.0])).collect();
    let ys: Vec<Vector> = xs[1..].iter().map(|x| v(&[2.0 * x[0] + 0.5])).collect();
    let trial = Trial::new(0, ys);
    let lat = LatentState::new(xs, vec![0; 20]);
    let stats = emission_stats(&[trial], &[lat], 1, 1);
    let mut prior = PriorConfig::default().build(1, 1).unwrap().emission;
    prior.col_cov *= 1e12;
    prior.s_scale *= 1e-10;
    let post = emission_gaussian_posterior(&stats, &prior).unwrap();
    assert!((post.mean[(0, 0)] - 2.0).abs() < 1e-8 && (post.mean[(0, 1)] - 0.5).abs() < 1e-8);
    assert!(post.scale[(0, 0)] < 1e-9);
}

#[test]
fn emission_prior_without_data() {
    let prior = EmissionPrior {
        mean: Mat::from_row_slice(1, 2, &[1.5, -0.5]),
        col_cov: Mat::identity(2, 2),
        s_df: 3.0,
        s_scale: Mat::identity(1, 1),
    };
    let post = emission_gaussian_posterior(&SufficientStats::new(1, 1), &prior).unwrap();
    assert!((post.mean - &prior.mean).amax() < 1e-12);
    let mut flat = prior.clone();
    flat.col_cov *= 1e12;
    let mut one = SufficientStats::new(1, 1);
    one.add(&v(&[1.0]), &v(&[2.0]), 1.0);
    assert!(matches!(emission_gaussian_posterior(&one, &flat), Err(Error::IllPosed(_))));
}

#[test]
fn all_ones_push_offset_up() {
    let n = 40;
    let lat = LatentState {
        x: vec![v(&[0.0]); n + 1],
        z: vec![0; n],
        omega: vec![],
        eta: vec![v(&[0.25]); n],
    };
    let trial = Trial::new(0, vec![v(&[1.0]); n]);
    let prior = PriorConfig::default().build(1, 1).unwrap().emission;
    let post = bernoulli_row_posterior(0, &[trial], &[lat], &prior).unwrap();
    assert!(post.mean().unwrap()[1] > 0.0);
}

#[test]
fn hyperplane_separates_routed_points() {
    // Left turns at x < 0, right turns at x > 0.
    let t = TreeTopology::build(2).unwrap();
    let xs: Vec<Vector> = (0..41).map(|i| v(&[i as f64 * 0.1 - 2.0])).collect();
    let z: Vec<usize> = xs[..40].iter().map(|x| usize::from(x[0] > 0.0)).collect();
    let mut lat = LatentState::new(xs, z);
    lat.omega = vec![vec![0.25]; 40];
    let post = hyperplane_posterior(NodeId::ROOT, &[lat.clone()], &t, 1, 10.0, 1.0);
    assert!(post.mean().unwrap()[0] < 0.0);
    let flipped = hyperplane_posterior(NodeId::ROOT, &[lat], &t, 1, 10.0, -1.0);
    assert!(flipped.mean().unwrap()[0] > 0.0);
}

#[test]
fn auxiliary_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let priors = PriorConfig::default().build(2, 3).unwrap();
    for k in [1usize, 4] {
        let t = TreeTopology::build(k).unwrap();
        let p = trslds::model::sample_prior_params(&priors, &t, trslds::model::ObservationKind::Bernoulli, &mut rng)
            .unwrap();
        let lat = LatentState::new(vec![v(&[0.1, 0.2]); 6], vec![k - 1; 5]);
        let omega = update_recurrence_pg(&lat, &p.hyperplanes, &t, &mut rng);
        let expect = if k == 1 { 0 } else { 2 };
        assert!(omega.iter().all(|o| o.len() == expect && o.iter().all(|&w| w > 0.0)));
        let eta = update_emission_pg(&lat, &p, &mut rng);
        assert_eq!(eta.len(), 5);
        assert!(eta.iter().all(|e| e.len() == 3));
    }
}

#[test]
fn noise_posterior_is_inverse_gamma_in_1d() {
    // Closed-form inverse-gamma density vs the IW density at the posterior parameters.
    let mut x = vec![v(&[0.0])];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..8 {
        x.push(x.last().unwrap() + std_normal_vec(1, &mut rng) * 0.3);
    }
    let stats = leaf_stats(0, &[LatentState::new(x.clone(), vec![0; 8])], 1);
    let prior = NoisePrior { df: 3.0, scale: Mat::identity(1, 1) * 0.1 };
    let (df, scale) = noise_posterior(&NodeDynamics::zeros(1), &stats, &prior);
    let ss: f64 = x.windows(2).map(|w| (w[1][0] - w[0][0]).powi(2)).sum();
    assert_eq!(df, 3.0 + 8.0);
    assert!((scale[(0, 0)] - (0.1 + ss)).abs() < 1e-12);
}
