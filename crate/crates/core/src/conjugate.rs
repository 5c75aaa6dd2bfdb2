//! Closed-form conditional draws for the parameter blocks and the Pólya-Gamma
//! auxiliaries.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    augment, cholesky, inverse_spd, kron, sample_gaussian_info, sample_inv_wishart, std_normal_mat,
    symmetrize, vec_of, Mat, Vector,
};
use crate::model::{EmissionPrior, LatentState, ModelParams, NodeDynamics, NoisePrior, Trial};
use crate::polya_gamma::sample_pg1;
use crate::stick_breaking::{Hyperplane, HyperplaneSet};
use crate::tree::{NodeId, TreeTopology};

/// Gaussian in information form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub precision: Mat,
    pub info: Vector,
}

impl GaussianPosterior {
    pub fn mean(&self) -> Result<Vector> {
        Ok(cholesky(&self.precision, "posterior precision")?.solve(&self.info))
    }

    pub fn cov(&self) -> Result<Mat> {
        inverse_spd(&self.precision, "posterior precision")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vector> {
        Ok(sample_gaussian_info(&self.precision, &self.info, rng, "posterior precision")?.1)
    }
}

/// Weighted moments of a regression of `y` on `x̃ = (x, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `Σ w x̃ x̃ᵀ`
    pub xx: Mat,
    /// `Σ w y x̃ᵀ`
    pub yx: Mat,
    /// `Σ w y yᵀ`
    pub yy: Mat,
    pub count: f64,
}

impl SufficientStats {
    pub fn new(d_in: usize, d_out: usize) -> Self {
        SufficientStats {
            xx: Mat::zeros(d_in + 1, d_in + 1),
            yx: Mat::zeros(d_out, d_in + 1),
            yy: Mat::zeros(d_out, d_out),
            count: 0.0,
        }
    }

    pub fn add(&mut self, x: &Vector, y: &Vector, weight: f64) {
        let xt = augment(x);
        self.xx += &xt * xt.transpose() * weight;
        self.yx += y * xt.transpose() * weight;
        self.yy += y * y.transpose() * weight;
        self.count += weight;
    }

    pub fn merge(&mut self, other: &SufficientStats) {
        self.xx += &other.xx;
        self.yx += &other.yx;
        self.yy += &other.yy;
        self.count += other.count;
    }

    /// `Σ (y − W x̃)(y − W x̃)ᵀ`.
    pub fn residual_scatter(&self, w: &Mat) -> Mat {
        let wyx = w * self.yx.transpose();
        symmetrize(&(&self.yy - &wyx - wyx.transpose() + w * &self.xx * w.transpose()))
    }
}

/// Increments `x_t − x_{t−1}` regressed on `x̃_{t−1}` over the steps assigned to leaf `k`.
pub fn leaf_stats(k: usize, latents: &[LatentState], d_x: usize) -> SufficientStats {
    let mut s = SufficientStats::new(d_x, d_x);
    for lat in latents {
        for (t, &z) in lat.z.iter().enumerate() {
            if z == k {
                s.add(&lat.x[t], &(&lat.x[t + 1] - &lat.x[t]), 1.0);
            }
        }
    }
    s
}

/// Conditional of `vec([A_k b_k])` given `Q_k`, prior `N(prior_mean, prior_cov)`.
pub fn leaf_dynamics_posterior(
    prior_mean: &Vector,
    prior_cov: &Mat,
    stats: &SufficientStats,
    q: &Mat,
) -> Result<GaussianPosterior> {
    let prior_prec = inverse_spd(prior_cov, "leaf dynamics prior covariance")?;
    let q_inv = inverse_spd(q, "leaf noise covariance")?;
    let precision = symmetrize(&(&prior_prec + kron(&stats.xx, &q_inv)));
    let info = &prior_prec * prior_mean + vec_of(&(&q_inv * &stats.yx));
    Ok(GaussianPosterior { precision, info })
}

pub fn update_leaf_dynamics<R: Rng + ?Sized>(
    prior_mean: &Vector,
    prior_cov: &Mat,
    stats: &SufficientStats,
    q: &Mat,
    rng: &mut R,
) -> Result<NodeDynamics> {
    let post = leaf_dynamics_posterior(prior_mean, prior_cov, stats, q)?;
    Ok(NodeDynamics::from_vec(&post.sample(rng)?, q.nrows()))
}

/// Inverse-Wishart conditional `(df, scale)` of `Q_k` given the leaf dynamics.
pub fn noise_posterior(dynamics: &NodeDynamics, stats: &SufficientStats, prior: &NoisePrior) -> (f64, Mat) {
    let scatter = stats.residual_scatter(&dynamics.stacked());
    (prior.df + stats.count, symmetrize(&(&prior.scale + scatter)))
}

pub fn update_leaf_noise<R: Rng + ?Sized>(
    dynamics: &NodeDynamics,
    stats: &SufficientStats,
    prior: &NoisePrior,
    rng: &mut R,
) -> Result<Mat> {
    let (df, scale) = noise_posterior(dynamics, stats, prior);
    sample_inv_wishart(df, &scale, rng)
}

/// Conditional of an internal node given its parent term `N(parent_mean, own_cov)`
/// and children `N(child | node, child_cov)`.
pub fn internal_posterior(
    parent_mean: &Vector,
    own_cov: &Mat,
    children: &[(Vector, Mat)],
) -> Result<GaussianPosterior> {
    let own_prec = inverse_spd(own_cov, "node prior covariance")?;
    let mut precision = own_prec.clone();
    let mut info = &own_prec * parent_mean;
    for (child, cov) in children {
        let prec = inverse_spd(cov, "child prior covariance")?;
        info += &prec * child;
        precision += prec;
    }
    Ok(GaussianPosterior { precision: symmetrize(&precision), info })
}

pub fn update_internal_dynamics<R: Rng + ?Sized>(
    parent_mean: &Vector,
    own_cov: &Mat,
    children: &[(Vector, Mat)],
    dim: usize,
    rng: &mut R,
) -> Result<NodeDynamics> {
    let post = internal_posterior(parent_mean, own_cov, children)?;
    Ok(NodeDynamics::from_vec(&post.sample(rng)?, dim))
}

/// `y_t` regressed on `x̃_t` over all trials.
pub fn emission_stats(trials: &[Trial], latents: &[LatentState], d_x: usize, d_y: usize) -> SufficientStats {
    let mut s = SufficientStats::new(d_x, d_y);
    for (trial, lat) in trials.iter().zip(latents) {
        for (t, y) in trial.y.iter().enumerate() {
            s.add(&lat.x[t + 1], y, 1.0);
        }
    }
    s
}

/// Matrix-normal inverse-Wishart posterior of `([C d], S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MniwPosterior {
    pub mean: Mat,
    /// Column covariance `V_n`.
    pub col_cov: Mat,
    pub df: f64,
    pub scale: Mat,
}

const FLAT_PRIOR_VAR: f64 = 1e10;

pub fn emission_gaussian_posterior(stats: &SufficientStats, prior: &EmissionPrior) -> Result<MniwPosterior> {
    let p = stats.xx.nrows();
    let v0_inv = inverse_spd(&prior.col_cov, "emission prior column covariance")?;
    let flat = prior.col_cov.clone().symmetric_eigen().eigenvalues.min() > FLAT_PRIOR_VAR;
    if flat && stats.count < p as f64 {
        return Err(Error::ill_posed(format!(
            "{} time steps cannot determine {p} regression coefficients under a flat prior",
            stats.count
        )));
    }
    let prec = symmetrize(&(&v0_inv + &stats.xx));
    let col_cov = inverse_spd(&prec, "emission posterior precision")
        .map_err(|_| Error::ill_posed("emission regressors are degenerate"))?;
    let m0v = &prior.mean * &v0_inv;
    let mean = (&m0v + &stats.yx) * &col_cov;
    let scale = symmetrize(
        &(&prior.s_scale + &stats.yy + &m0v * prior.mean.transpose() - &mean * &prec * mean.transpose()),
    );
    Ok(MniwPosterior { mean, col_cov, df: prior.s_df + stats.count, scale })
}

/// Draws `([C d], S)`; returns the stacked weights and `S`.
pub fn update_emission_gaussian<R: Rng + ?Sized>(
    stats: &SufficientStats,
    prior: &EmissionPrior,
    rng: &mut R,
) -> Result<(Mat, Mat)> {
    let post = emission_gaussian_posterior(stats, prior)?;
    let s = sample_inv_wishart(post.df, &post.scale, rng)?;
    let ls = cholesky(&s, "emission covariance draw")?.l();
    let lv = cholesky(&post.col_cov, "emission column covariance")?.l();
    let e = std_normal_mat(post.mean.nrows(), post.mean.ncols(), rng);
    Ok((&post.mean + ls * e * lv.transpose(), s))
}

/// Conditional of row `n` of `[C d]` given the auxiliaries `η`, with `κ = y − ½`.
pub fn bernoulli_row_posterior(
    row: usize,
    trials: &[Trial],
    latents: &[LatentState],
    prior: &EmissionPrior,
) -> Result<GaussianPosterior> {
    let v0_inv = inverse_spd(&prior.col_cov, "emission prior column covariance")?;
    let mut precision = v0_inv.clone();
    let mut info = &v0_inv * prior.mean.row(row).transpose();
    for (trial, lat) in trials.iter().zip(latents) {
        for (t, y) in trial.y.iter().enumerate() {
            let xt = augment(&lat.x[t + 1]);
            let eta = lat.eta[t][row];
            precision += &xt * xt.transpose() * eta;
            info += &xt * (y[row] - 0.5);
        }
    }
    Ok(GaussianPosterior { precision: symmetrize(&precision), info })
}

/// Draws every row of `[C d]` for Bernoulli emissions.
pub fn update_emission_bernoulli<R: Rng + ?Sized>(
    trials: &[Trial],
    latents: &[LatentState],
    prior: &EmissionPrior,
    rng: &mut R,
) -> Result<Mat> {
    let (dy, p) = prior.mean.shape();
    let mut w = Mat::zeros(dy, p);
    for row in 0..dy {
        let draw = bernoulli_row_posterior(row, trials, latents, prior)?.sample(rng)?;
        w.set_row(row, &draw.transpose());
    }
    Ok(w)
}

/// `κ_{n,t}`: `+½` when the route turns left at `n`, `−½` otherwise.
pub fn recurrence_kappa(left: bool) -> f64 {
    if left {
        0.5
    } else {
        -0.5
    }
}

/// Conditional of `(R_n, r_n)` given the auxiliaries on steps whose route
/// passes through `n`. `kappa_sign` is `1.0` except in sampler self-tests.
pub fn hyperplane_posterior(
    node: NodeId,
    latents: &[LatentState],
    topology: &TreeTopology,
    dim: usize,
    prior_var: f64,
    kappa_sign: f64,
) -> GaussianPosterior {
    let d = dim;
    let mut precision = Mat::identity(d + 1, d + 1) / prior_var;
    let mut info = Vector::zeros(d + 1);
    for lat in latents {
        for (t, &z) in lat.z.iter().enumerate() {
            let route = topology.route(z);
            if let Some(j) = route.iter().position(|turn| turn.node == node) {
                let xt = augment(&lat.x[t]);
                let omega = lat.omega[t][j];
                precision += &xt * xt.transpose() * omega;
                info += &xt * (kappa_sign * recurrence_kappa(route[j].left));
            }
        }
    }
    GaussianPosterior { precision: symmetrize(&precision), info }
}

pub fn update_hyperplane<R: Rng + ?Sized>(
    node: NodeId,
    latents: &[LatentState],
    topology: &TreeTopology,
    dim: usize,
    prior_var: f64,
    kappa_sign: f64,
    rng: &mut R,
) -> Result<Hyperplane> {
    let post = hyperplane_posterior(node, latents, topology, dim, prior_var, kappa_sign);
    Ok(Hyperplane::from_stacked(&post.sample(rng)?))
}

/// `ω_{n,t} ~ PG(1, ν_n(x_{t−1}))` for every internal node on the route of `z_t`.
pub fn update_recurrence_pg<R: Rng + ?Sized>(
    latent: &LatentState,
    gates: &HyperplaneSet,
    topology: &TreeTopology,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    latent
        .z
        .iter()
        .enumerate()
        .map(|(t, &z)| {
            topology
                .route(z)
                .iter()
                .map(|turn| sample_pg1(gates.plane(turn.node).logit(&latent.x[t]), rng))
                .collect()
        })
        .collect()
}

/// `η_{n,t} ~ PG(1, c_nᵀ x_t + d_n)` for every output and step.
pub fn update_emission_pg<R: Rng + ?Sized>(latent: &LatentState, params: &ModelParams, rng: &mut R) -> Vec<Vector> {
    latent.x[1..]
        .iter()
        .map(|x| params.emission.mean(x).map(|v| sample_pg1(v, rng)))
        .collect()
}
