mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trslds::latent::{ffbs_continuous, LatentCache};
use trslds::linalg::{Mat, Vector};
use trslds::model::{
    sample_prior_params, simulate, EmissionParams, LatentState, ModelParams, NodeDynamics, ObservationKind,
    PriorConfig, Trial,
};
use trslds::stick_breaking::HyperplaneSet;
use trslds::tree::TreeTopology;

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn draw_moments(
    trial: &Trial,
    lat: &LatentState,
    params: &ModelParams,
    n: usize,
    seed: u64,
) -> (Vector, Mat) {
    let cache = LatentCache::new(params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = (trial.len() + 1) * params.d_x();
    let mut sum = Vector::zeros(dim);
    let mut outer = Mat::zeros(dim, dim);
    for _ in 0..n {
        let x = ffbs_continuous(trial, lat, params, &cache, &mut rng).unwrap();
        let s = Vector::from_iterator(dim, x.iter().flat_map(|xt| xt.iter().copied()));
        sum += &s;
        outer += &s * s.transpose();
    }
    let mean = sum / n as f64;
    let cov = outer / n as f64 - &mean * mean.transpose();
    (mean, cov)
}

#[test]
fn ffbs_matches_kalman_smoother() {
    let t = TreeTopology::build(1).unwrap();
    let priors = PriorConfig::default().build(2, 2).unwrap();
    let params = ModelParams {
        dynamics: vec![NodeDynamics::new(Mat::from_row_slice(2, 2, &[-0.05, 0.3, -0.3, -0.05]), v(&[0.5, 0.2]))],
        noise: vec![Mat::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1])],
        hyperplanes: HyperplaneSet::zeros(&t, 2),
        emission: EmissionParams::gaussian(
            Mat::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.2]),
            v(&[1.0, -1.0]),
            Mat::identity(2, 2) * 0.3,
        ),
        priors,
        topology: t,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sim = simulate(&params, &v(&[2.0, 1.0]), 5, &mut rng).unwrap();
    let trial = Trial::new(0, sim.y.clone());
    let mut lat = LatentState::new(sim.x.clone(), vec![0; 5]);
    lat.omega = vec![vec![]; 5];
    let (mean, cov) = draw_moments(&trial, &lat, &params, 100_000, 1);
    let (m_ks, p_ks) = common::kalman_smoother(&params, &sim.y);
    let m_ref = Vector::from_iterator(12, m_ks.iter().flat_map(|m| m.iter().copied()));
    let mean_err = (&mean - &m_ref).norm() / m_ref.norm();
    let mut cov_num = 0.0;
    let mut cov_den = 0.0;
    for (t, p) in p_ks.iter().enumerate() {
        let block = cov.view((2 * t, 2 * t), (2, 2)).into_owned();
        cov_num += (block - p).norm_squared();
        cov_den += p.norm_squared();
    }
    let cov_err = (cov_num / cov_den).sqrt();
    assert!(mean_err < 0.02 && cov_err < 0.02, "mean {mean_err}, cov {cov_err}");
}

#[test]
fn ffbs_matches_dense_joint_with_gates() {
    for kind in [ObservationKind::Gaussian, ObservationKind::Bernoulli] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = TreeTopology::build(2).unwrap();
        let priors = PriorConfig { tau: 0.3, ..Default::default() }.build(1, 2).unwrap();
        let mut params = sample_prior_params(&priors, &t, kind, &mut rng).unwrap();
        params.noise = vec![Mat::from_element(1, 1, 0.3), Mat::from_element(1, 1, 0.6)];
        if let Some(s) = params.emission.s.as_mut() {
            *s = Mat::identity(2, 2) * 0.5;
        }
        let y = match kind {
            ObservationKind::Gaussian => vec![v(&[0.3, -0.2]), v(&[1.0, 0.4]), v(&[-0.5, 0.1])],
            ObservationKind::Bernoulli => vec![v(&[1.0, 0.0]), v(&[1.0, 1.0]), v(&[0.0, 0.0])],
        };
        let trial = Trial::new(0, y);
        let mut lat = LatentState::new(vec![v(&[0.0]); 4], vec![0, 1, 0]);
        lat.omega = vec![vec![0.3], vec![1.2], vec![0.05]];
        if kind == ObservationKind::Bernoulli {
            lat.eta = vec![v(&[0.2, 0.4]), v(&[0.1, 0.3]), v(&[0.25, 0.25])];
        }
        let (mean, cov) = draw_moments(&trial, &lat, &params, 100_000, 2);
        let (m_ref, c_ref) = common::dense_joint(&trial, &lat, &params);
        let mean_err = (&mean - &m_ref).norm() / m_ref.norm();
        let cov_err = common::rel_err(&cov, &c_ref);
        assert!(mean_err < 0.02 && cov_err < 0.02, "{kind:?}: mean {mean_err}, cov {cov_err}");
    }
}
