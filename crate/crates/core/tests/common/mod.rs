//! Reference implementations used only to check the library.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use trslds::linalg::{sigmoid, Mat, Vector};
use trslds::model::{LatentState, ModelParams, ObservationKind, Trial};

/// Covariance-form Kalman filter and Rauch-Tung-Striebel smoother for a
/// single-leaf model with Gaussian emissions. Returns smoothed means and
/// covariances of `x_0..x_T`.
pub fn kalman_smoother(params: &ModelParams, y: &[Vector]) -> (Vec<Vector>, Vec<Mat>) {
    assert_eq!(params.num_leaves(), 1);
    let dx = params.d_x();
    let dyn0 = params.leaf_dynamics(0);
    let f = Mat::identity(dx, dx) + &dyn0.a;
    let q = &params.noise[0];
    let c = &params.emission.c;
    let s = params.emission.s.as_ref().unwrap();
    let mut m_f = vec![params.priors.initial.mean.clone()];
    let mut p_f = vec![params.priors.initial.cov.clone()];
    let mut m_p = vec![Vector::zeros(dx)];
    let mut p_p = vec![Mat::zeros(dx, dx)];
    for yt in y {
        let mp = &f * m_f.last().unwrap() + &dyn0.b;
        let pp = &f * p_f.last().unwrap() * f.transpose() + q;
        let innov_cov = c * &pp * c.transpose() + s;
        let gain = &pp * c.transpose() * innov_cov.try_inverse().unwrap();
        let m = &mp + &gain * (yt - c * &mp - &params.emission.d);
        let p = (Mat::identity(dx, dx) - &gain * c) * &pp;
        m_p.push(mp);
        p_p.push(pp);
        m_f.push(m);
        p_f.push(p);
    }
    let n = y.len();
    let mut m_s = m_f.clone();
    let mut p_s = p_f.clone();
    for t in (0..n).rev() {
        let g = &p_f[t] * f.transpose() * p_p[t + 1].clone().try_inverse().unwrap();
        m_s[t] = &m_f[t] + &g * (&m_s[t + 1] - &m_p[t + 1]);
        p_s[t] = &p_f[t] + &g * (&p_s[t + 1] - &p_p[t + 1]) * g.transpose();
    }
    (m_s, p_s)
}

/// Log density of `x_{0:T}` given `z`, `ω`, `η` and the data, up to a
/// constant, written straight from the model definition.
pub fn conditional_log_density(x: &[Vector], trial: &Trial, lat: &LatentState, params: &ModelParams) -> f64 {
    let quad = |v: &Vector, m: &Mat| -0.5 * (v.transpose() * m * v)[(0, 0)];
    let init = &params.priors.initial;
    let mut lp = quad(&(&x[0] - &init.mean), &init.cov.clone().try_inverse().unwrap());
    for t in 1..x.len() {
        let k = lat.z[t - 1];
        let q_inv = params.noise[k].clone().try_inverse().unwrap();
        let mean = &x[t - 1] + &params.leaf_dynamics(k).a * &x[t - 1] + &params.leaf_dynamics(k).b;
        lp += quad(&(&x[t] - mean), &q_inv);
        for (j, turn) in params.topology.route(k).iter().enumerate() {
            let h = params.hyperplanes.get(turn.node).unwrap();
            let nu = h.weight.dot(&x[t - 1]) + h.offset;
            let kappa = if turn.left { 0.5 } else { -0.5 };
            let omega = lat.omega[t - 1][j];
            lp += kappa * nu - 0.5 * omega * nu * nu;
        }
        let y = &trial.y[t - 1];
        let e = &params.emission;
        let u = &e.c * &x[t] + &e.d;
        match e.kind {
            ObservationKind::Gaussian => {
                lp += quad(&(y - u), &e.s.clone().unwrap().try_inverse().unwrap());
            }
            ObservationKind::Bernoulli => {
                for i in 0..y.len() {
                    lp += (y[i] - 0.5) * u[i] - 0.5 * lat.eta[t - 1][i] * u[i] * u[i];
                }
            }
        }
    }
    lp
}

/// Mean and covariance of the stacked `x_{0:T}` by reading the quadratic form
/// off [`conditional_log_density`] with exact polarisation identities.
pub fn dense_joint(trial: &Trial, lat: &LatentState, params: &ModelParams) -> (Vector, Mat) {
    let dx = params.d_x();
    let n = (trial.len() + 1) * dx;
    let unstack = |v: &Vector| -> Vec<Vector> { (0..=trial.len()).map(|t| v.rows(t * dx, dx).into_owned()).collect() };
    let f = |v: &Vector| conditional_log_density(&unstack(v), trial, lat, params);
    let zero = Vector::zeros(n);
    let f0 = f(&zero);
    let e = |i: usize| {
        let mut v = Vector::zeros(n);
        v[i] = 1.0;
        v
    };
    let mut precision = Mat::zeros(n, n);
    let mut info = Vector::zeros(n);
    for i in 0..n {
        let fi = f(&e(i));
        info[i] = 0.5 * (fi - f(&(-e(i))));
        for j in 0..n {
            let fj = f(&e(j));
            precision[(i, j)] = -(f(&(e(i) + e(j))) - fi - fj + f0);
        }
    }
    let cov = precision.try_inverse().unwrap();
    (&cov * info, cov)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    (d, kolmogorov_q(lambda))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Truncated sum-of-gammas representation of `PG(b, c)` with `terms` terms,
/// plus the mean of the omitted tail (whose spread is negligible).
pub fn pg_truncated_sum<R: Rng + ?Sized>(b: f64, c: f64, terms: usize, rng: &mut R) -> f64 {
    let gamma = Gamma::new(b, 1.0).unwrap();
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let shift = c * c / (4.0 * pi2);
    let mut acc = 0.0;
    for k in 1..=terms {
        let h = k as f64 - 0.5;
        acc += gamma.sample(rng) / (h * h + shift);
    }
    // Σ_{k>N} 1/((k−½)² + s) ≈ ∫_N^∞ du/(u² + s) by the midpoint rule.
    let n = terms as f64;
    let tail = if shift > 0.0 {
        (std::f64::consts::FRAC_PI_2 - (n / shift.sqrt()).atan()) / shift.sqrt()
    } else {
        1.0 / n
    };
    (acc + b * tail) / (2.0 * pi2)
}

/// Total-variation distance between a density known up to a constant on a
/// uniform grid and a reference density evaluated on the same grid.
pub fn grid_tv(log_unnorm: &[f64], reference: &[f64], cell: f64) -> f64 {
    let max = log_unnorm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_unnorm.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum::<f64>() * cell;
    let rz: f64 = reference.iter().sum::<f64>() * cell;
    0.5 * w
        .iter()
        .zip(reference)
        .map(|(a, b)| (a / z - b / rz).abs())
        .sum::<f64>()
        * cell
}

pub fn gaussian_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

pub fn log_bernoulli(y: f64, logit: f64) -> f64 {
    if y > 0.5 {
        sigmoid(logit).ln()
    } else {
        (1.0 - sigmoid(logit)).ln()
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let step = (hi - lo) / n as f64;
    ((0..n).map(|i| lo + (i as f64 + 0.5) * step).collect(), step)
}

/// Relative Frobenius error `‖a − b‖ / ‖b‖`.
pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm()
}
