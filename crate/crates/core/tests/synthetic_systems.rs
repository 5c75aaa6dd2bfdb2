use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trslds::linalg::{Mat, Vector};
use trslds::model::{EmissionParams, Trial};
use trslds::synthetic::*;

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

#[test]
fn fhn_defaults() {
    let s = FhnSpec::default();
    assert_eq!((s.params.a, s.params.b, s.params.tau), (0.7, 0.8, 12.5));
    assert_eq!((s.trajectories, s.points, s.i_ext_mean, s.i_ext_var), (100, 430, 0.7, 0.04));
    let e = fhn_emission();
    assert_eq!(e.c, Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -2.0]));
    assert_eq!(e.d, v(&[0.5, 0.5]));
    assert_eq!(e.s.unwrap(), Mat::identity(2, 2) * 0.01);
}

#[test]
fn fhn_rest_state_is_an_equilibrium() {
    let p = FhnParams::default();
    let x_star = fhn_fixed_point(&p, 0.0);
    assert!(fhn_rhs(&x_star, &p, 0.0).amax() < 1e-12);
    let path = integrate(|x| fhn_rhs(x, &p, 0.0), &x_star, 0.1, 1000, Integrator::Rk4);
    assert!(path.iter().all(|x| (x - &x_star).norm() < 1e-6));
}

#[test]
fn fhn_orbit_is_bounded_and_matches_fine_integration() {
    let p = FhnParams::default();
    let x0 = v(&[2.5, -1.0]);
    let coarse = integrate(|x| fhn_rhs(x, &p, 0.7), &x0, 0.1, 4000, Integrator::Rk4);
    let fine = integrate(|x| fhn_rhs(x, &p, 0.7), &x0, 0.01, 39_991, Integrator::Rk4);
    let tail = |path: &[Vector], stride: usize| -> (f64, f64) {
        path[path.len() / 2..].iter().step_by(stride).fold((f64::MAX, f64::MIN), |(lo, hi), x| (lo.min(x[0]), hi.max(x[0])))
    };
    let (lo, hi) = tail(&coarse, 1);
    let (flo, fhi) = tail(&fine, 10);
    assert!(lo >= -2.5 && hi <= 2.5, "{lo} {hi}");
    // The orbit is a genuine oscillation, and the coarse bounds agree with the fine ones.
    assert!(hi - lo > 2.0);
    assert!((lo - flo).abs() < 0.05 && (hi - fhi).abs() < 0.05);
}

fn global_error(dt: f64, reference: &Vector, horizon: f64) -> f64 {
    let p = FhnParams::default();
    let steps = (horizon / dt).round() as usize;
    let path = integrate(|x| fhn_rhs(x, &p, 0.7), &v(&[1.0, 0.5]), dt, steps + 1, Integrator::Rk4);
    (path.last().unwrap() - reference).norm()
}

#[test]
fn rk4_is_fourth_order_on_fhn() {
    let p = FhnParams::default();
    let horizon = 43.0;
    let fine = integrate(|x| fhn_rhs(x, &p, 0.7), &v(&[1.0, 0.5]), 0.1 / 64.0, 64 * 430 + 1, Integrator::Rk4);
    let reference = fine.last().unwrap().clone();
    let ratio = global_error(0.2, &reference, horizon) / global_error(0.1, &reference, horizon);
    assert!(ratio > 8.0 && ratio < 32.0, "ratio {ratio}");
    let e1 = integrate(|x| fhn_rhs(x, &p, 0.7), &v(&[1.0, 0.5]), 0.1, 431, Integrator::Euler);
    assert!((e1.last().unwrap() - &reference).norm() > global_error(0.1, &reference, horizon));
}

#[test]
fn fhn_generator_draws_one_current_per_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = FhnSpec { trajectories: 400, points: 5, ..Default::default() };
    let data = simulate_fhn(&spec, &mut rng).unwrap();
    assert_eq!(data.x.len(), 400);
    assert!(data.x.iter().all(|t| t.len() == 5));
    assert!(data.x.iter().all(|t| t[0].amax() <= 3.0));
    let n = data.i_ext.len() as f64;
    let m = data.i_ext.iter().sum::<f64>() / n;
    let var = data.i_ext.iter().map(|i| (i - m).powi(2)).sum::<f64>() / n;
    assert!((m - 0.7).abs() < 4.0 * (0.04f64 / n).sqrt());
    assert!((var - 0.04).abs() < 0.01);
    let again = simulate_fhn(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(again, data);
}

#[test]
fn lorenz_origin_is_unstable() {
    let p = LorenzParams::default();
    let path = integrate(|x| lorenz_rhs(x, &p), &v(&[1e-6, 0.0, 0.0]), 0.01, 1000, Integrator::Rk4);
    assert!(path.last().unwrap().norm() > 1e-3);
}

#[test]
fn lorenz_fixture_stays_in_box_and_is_step_converged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = LorenzSpec { trajectories: 10, ..Default::default() };
    let paths = simulate_lorenz(&spec, &mut rng).unwrap();
    assert_eq!(paths[0].len(), 230);
    for x in paths.iter().flatten() {
        assert!(x[0].abs() <= 30.0 && x[1].abs() <= 30.0 && (0.0..=60.0).contains(&x[2]), "{x}");
    }
    let p = LorenzParams::default();
    let full = integrate(|x| lorenz_rhs(x, &p), &paths[0][0], 0.01, 101, Integrator::Rk4);
    let half = integrate(|x| lorenz_rhs(x, &p), &paths[0][0], 0.005, 201, Integrator::Rk4);
    for (i, x) in full.iter().enumerate() {
        assert!((x - &half[2 * i]).amax() < 1e-3);
    }
}

#[test]
fn random_orthonormal_has_orthonormal_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random_orthonormal(10, 3, &mut rng);
    assert!((q.transpose() * &q - Mat::identity(3, 3)).amax() < 1e-12);
}

fn lap(gates: NascarGates) -> SwitchingData {
    let spec = NascarSpec { gates, noise_sd: 0.0, points: 400, ..Default::default() };
    simulate_nascar(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
}

#[test]
fn nascar_tracks_close_and_visit_four_regimes() {
    for gates in [NascarGates::Sequential, NascarGates::Tree] {
        let data = lap(gates);
        let x = &data.x[0];
        let z = &data.z[0];
        // First return near the start after leaving its neighbourhood.
        let away = x.iter().position(|p| (p - &x[0]).norm() > 1.0).unwrap();
        let back = (away..x.len()).find(|&t| (&x[t] - &x[0]).norm() < 0.5).expect("no return");
        let mut seen: Vec<usize> = z[..back].to_vec();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, vec![0, 1, 2, 3], "{gates:?}");
        // Runs of each regime per lap: exactly four regime changes around the loop.
        let changes = z[..back].windows(2).filter(|w| w[0] != w[1]).count();
        assert!((3..=4).contains(&changes), "{gates:?}: {changes}");
    }
}

#[test]
fn nascar_gate_layouts() {
    let seq = nascar_model(&NascarSpec::default()).unwrap();
    assert_eq!(seq.topology, trslds::TreeTopology::sequential(4).unwrap());
    let tree = nascar_model(&NascarSpec { gates: NascarGates::Tree, ..Default::default() }).unwrap();
    assert_eq!(tree.topology, trslds::TreeTopology::build(4).unwrap());
}

#[test]
fn observation_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs = vec![vec![v(&[0.3, -0.2]), v(&[1.0, 2.0])]];
    let exact = EmissionParams::gaussian(Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]), v(&[1.0, 0.0]), Mat::zeros(2, 2));
    let trials = observe(&xs, &exact, &mut rng).unwrap();
    for (x, y) in xs[0].iter().zip(&trials[0].y) {
        assert_eq!(y, &exact.mean(x));
    }
    let coin = EmissionParams::bernoulli(Mat::zeros(1, 2), v(&[0.0]));
    let many = vec![vec![v(&[0.0, 0.0]); 10_000]];
    let t = observe(&many, &coin, &mut rng).unwrap();
    let rate = t[0].y.iter().map(|y| y[0]).sum::<f64>() / 10_000.0;
    assert!(t[0].y.iter().all(|y| y[0] == 0.0 || y[0] == 1.0));
    assert!((rate - 0.5).abs() < 3.0 * 0.005);
}

#[test]
fn train_test_split_takes_the_final_points() {
    let trial = Trial::new(7, (0..10).map(|i| v(&[i as f64])).collect());
    let (train, test) = split_train_test(&[trial.clone()], 3).unwrap();
    assert_eq!(train[0].y, trial.y[..7].to_vec());
    assert_eq!(test[0].y, trial.y[7..].to_vec());
    assert_eq!((train[0].id, test[0].id), (7, 7));
    assert!(split_train_test(&[trial], 10).is_err());
}

#[test]
fn lds_model_is_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = lds_model(3, 5, &mut rng).unwrap();
    let f = Mat::identity(3, 3) + &p.dynamics[0].a;
    let rho = f.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
    assert!(rho < 1.0);
}
