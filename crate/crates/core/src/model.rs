//! Generative model: per-node affine dynamics under a hierarchical Gaussian
//! prior, leaf noise, gating hyperplanes and the emission layer.
//!
//! A state transition under leaf `k` is `x_t = x_{t−1} + A_k x_{t−1} + b_k + w_t`
//! with `w_t ~ N(0, Q_k)`. Dynamics are handled as the stacked `d × (d+1)`
//! matrix `[A b]` and its column-major vectorisation.

use nalgebra::{Cholesky, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky, log_det_chol, log_inv_wishart, log_mvn_chol, log_sigmoid, psd_sqrt,
    sample_gaussian, sample_inv_wishart, std_normal_vec, unvec, vec_of, Mat, Vector, LN_2PI,
};
use crate::parallel::map_indexed;
use crate::serde_mat;
use crate::stick_breaking::{sample_leaf, tree_leaf_log_probs, Hyperplane, HyperplaneSet};
use crate::tree::{NodeId, TreeTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDynamics {
    #[serde(with = "serde_mat::mat")]
    pub a: Mat,
    #[serde(with = "serde_mat::vector")]
    pub b: Vector,
}

impl NodeDynamics {
    pub fn new(a: Mat, b: Vector) -> Self {
        NodeDynamics { a, b }
    }

    pub fn zeros(dim: usize) -> Self {
        NodeDynamics::new(Mat::zeros(dim, dim), Vector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `[A b]`, a `d × (d+1)` matrix.
    pub fn stacked(&self) -> Mat {
        let d = self.dim();
        let mut m = Mat::zeros(d, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&self.a);
        m.set_column(d, &self.b);
        m
    }

    pub fn from_stacked(m: &Mat) -> Self {
        let d = m.nrows();
        NodeDynamics::new(m.columns(0, d).into_owned(), m.column(d).into_owned())
    }

    /// Column-major `vec([A b])`.
    pub fn to_vec(&self) -> Vector {
        vec_of(&self.stacked())
    }

    pub fn from_vec(v: &Vector, dim: usize) -> Self {
        NodeDynamics::from_stacked(&unvec(v, dim, dim + 1))
    }

    /// `A x + b`.
    pub fn drift(&self, x: &Vector) -> Vector {
        &self.a * x + &self.b
    }

    /// Noise-free next state `x + A x + b`.
    pub fn step(&self, x: &Vector) -> Vector {
        x + self.drift(x)
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationKind {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub kind: ObservationKind,
    #[serde(with = "serde_mat::mat")]
    pub c: Mat,
    #[serde(with = "serde_mat::vector")]
    pub d: Vector,
    #[serde(with = "serde_mat::opt_mat", default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Mat>,
}

impl EmissionParams {
    pub fn gaussian(c: Mat, d: Vector, s: Mat) -> Self {
        EmissionParams { kind: ObservationKind::Gaussian, c, d, s: Some(s) }
    }

    pub fn bernoulli(c: Mat, d: Vector) -> Self {
        EmissionParams { kind: ObservationKind::Bernoulli, c, d, s: None }
    }

    pub fn d_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn d_x(&self) -> usize {
        self.c.ncols()
    }

    /// `C x + d`: the Gaussian mean or the Bernoulli logits.
    pub fn mean(&self, x: &Vector) -> Vector {
        &self.c * x + &self.d
    }

    /// `[C d]`.
    pub fn weights(&self) -> Mat {
        let (dy, dx) = self.c.shape();
        let mut w = Mat::zeros(dy, dx + 1);
        w.view_mut((0, 0), (dy, dx)).copy_from(&self.c);
        w.set_column(dx, &self.d);
        w
    }

    pub fn set_weights(&mut self, w: &Mat) {
        let dx = w.ncols() - 1;
        self.c = w.columns(0, dx).into_owned();
        self.d = w.column(dx).into_owned();
    }

    /// Mean of `y_t` given `x_t`: `C x + d` or `σ(C x + d)`.
    pub fn predict(&self, x: &Vector) -> Vector {
        let m = self.mean(x);
        match self.kind {
            ObservationKind::Gaussian => m,
            ObservationKind::Bernoulli => m.map(crate::linalg::sigmoid),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d.len() != self.c.nrows() {
            return Err(Error::invalid("emission offset length differs from rows of C"));
        }
        match (self.kind, &self.s) {
            (ObservationKind::Gaussian, None) => Err(Error::invalid("gaussian emissions need S")),
            (ObservationKind::Gaussian, Some(s)) if s.shape() != (self.d_y(), self.d_y()) => {
                Err(Error::invalid("emission covariance S has the wrong shape"))
            }
            (ObservationKind::Bernoulli, Some(_)) => {
                Err(Error::invalid("bernoulli emissions carry no covariance"))
            }
            _ => Ok(()),
        }
    }
}

/// How node dynamics are tied together a priori.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// Each child is centred on its parent with covariance `λ^depth Σ_ε`.
    #[default]
    Tree,
    /// Leaves are independent `N(0, Σ_ε)` and internal nodes carry no dynamics
    /// (the recurrent SLDS baseline).
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyPrior {
    /// Covariance of `vec([A_ε b_ε])`, size `d(d+1)`.
    #[serde(with = "serde_mat::mat")]
    pub sigma_root: Mat,
    pub lambda: f64,
    #[serde(default)]
    pub kind: PriorKind,
}

impl HierarchyPrior {
    pub fn new(sigma_root: Mat, lambda: f64, kind: PriorKind) -> Result<Self> {
        let p = HierarchyPrior { sigma_root, lambda, kind };
        p.check()?;
        Ok(p)
    }

    pub fn isotropic(d_x: usize, tau: f64, lambda: f64, kind: PriorKind) -> Result<Self> {
        let p = d_x * (d_x + 1);
        HierarchyPrior::new(Mat::identity(p, p) * (tau * tau), lambda, kind)
    }

    fn check(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::invalid(format!("λ = {} must lie strictly in (0, 1)", self.lambda)));
        }
        if self.sigma_root.nrows() != self.sigma_root.ncols() {
            return Err(Error::invalid("Σ_ε must be square"));
        }
        if (&self.sigma_root - self.sigma_root.transpose()).amax() > 1e-10 * self.sigma_root.amax().max(1.0) {
            return Err(Error::invalid("Σ_ε must be symmetric"));
        }
        cholesky(&self.sigma_root, "Σ_ε").map_err(|_| Error::invalid("Σ_ε must be positive definite"))?;
        Ok(())
    }

    /// Prior covariance `Σ_n` of a node at `depth` around its parent.
    pub fn node_cov(&self, depth: usize) -> Mat {
        match self.kind {
            PriorKind::Tree => &self.sigma_root * self.lambda.powi(depth as i32),
            PriorKind::Independent => self.sigma_root.clone(),
        }
    }

    /// Prior mean and covariance of node `n` given all other dynamics.
    /// Returns `None` for nodes without prior (internal nodes of the independent kind).
    pub fn conditional_parent<'a>(
        &self,
        n: NodeId,
        topology: &TreeTopology,
        dynamics: &'a [NodeDynamics],
    ) -> Option<(Option<&'a NodeDynamics>, Mat)> {
        match self.kind {
            PriorKind::Tree => Some((
                topology.parent(n).map(|p| &dynamics[p.0]),
                self.node_cov(topology.depth(n)),
            )),
            PriorKind::Independent => topology.is_leaf(n).then(|| (None, self.sigma_root.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePrior {
    pub df: f64,
    #[serde(with = "serde_mat::mat")]
    pub scale: Mat,
}

/// Matrix-normal inverse-Wishart on `([C d], S)`; for Bernoulli emissions the
/// rows of `[C d]` are independent `N(mean_n, col_cov)` and `S` is unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionPrior {
    #[serde(with = "serde_mat::mat")]
    pub mean: Mat,
    #[serde(with = "serde_mat::mat")]
    pub col_cov: Mat,
    pub s_df: f64,
    #[serde(with = "serde_mat::mat")]
    pub s_scale: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialPrior {
    #[serde(with = "serde_mat::vector")]
    pub mean: Vector,
    #[serde(with = "serde_mat::mat")]
    pub cov: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub hierarchy: HierarchyPrior,
    pub noise: NoisePrior,
    /// Isotropic variance of the `N(0, v I)` prior on each stacked `(R_n, r_n)`.
    pub hyperplane_var: f64,
    pub emission: EmissionPrior,
    pub initial: InitialPrior,
}

/// Scalar hyperparameters from which full [`Priors`] are built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub tau: f64,
    pub lambda: f64,
    pub kind: PriorKind,
    /// `None` means `d_x + 2`.
    pub noise_df: Option<f64>,
    pub noise_scale: f64,
    pub hyperplane_var: f64,
    pub emission_col_var: f64,
    /// `None` means `d_y + 2`.
    pub emission_s_df: Option<f64>,
    pub emission_s_scale: f64,
    pub x0_var: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            tau: 1.0,
            lambda: 0.5,
            kind: PriorKind::Tree,
            noise_df: None,
            noise_scale: 1e-2,
            hyperplane_var: 10.0,
            emission_col_var: 100.0,
            emission_s_df: None,
            emission_s_scale: 1e-2,
            x0_var: 10.0,
        }
    }
}

impl PriorConfig {
    pub fn build(&self, d_x: usize, d_y: usize) -> Result<Priors> {
        let positive = [
            ("tau", self.tau),
            ("noise_scale", self.noise_scale),
            ("hyperplane_var", self.hyperplane_var),
            ("emission_col_var", self.emission_col_var),
            ("emission_s_scale", self.emission_s_scale),
            ("x0_var", self.x0_var),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("prior field `{name}` must be positive, got {v}")));
            }
        }
        let noise_df = self.noise_df.unwrap_or(d_x as f64 + 2.0);
        let s_df = self.emission_s_df.unwrap_or(d_y as f64 + 2.0);
        if noise_df <= d_x as f64 - 1.0 || s_df <= d_y as f64 - 1.0 {
            return Err(Error::invalid("inverse-Wishart degrees of freedom too small"));
        }
        Ok(Priors {
            hierarchy: HierarchyPrior::isotropic(d_x, self.tau, self.lambda, self.kind)?,
            noise: NoisePrior {
                df: noise_df,
                scale: Mat::identity(d_x, d_x) * self.noise_scale,
            },
            hyperplane_var: self.hyperplane_var,
            emission: EmissionPrior {
                mean: Mat::zeros(d_y, d_x + 1),
                col_cov: Mat::identity(d_x + 1, d_x + 1) * self.emission_col_var,
                s_df,
                s_scale: Mat::identity(d_y, d_y) * self.emission_s_scale,
            },
            initial: InitialPrior {
                mean: Vector::zeros(d_x),
                cov: Mat::identity(d_x, d_x) * self.x0_var,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub topology: TreeTopology,
    /// Indexed by node id.
    pub dynamics: Vec<NodeDynamics>,
    /// `Q_k`, indexed by leaf order.
    #[serde(with = "serde_mat::mat_list")]
    pub noise: Vec<Mat>,
    pub hyperplanes: HyperplaneSet,
    pub emission: EmissionParams,
    pub priors: Priors,
}

impl ModelParams {
    pub fn d_x(&self) -> usize {
        self.emission.d_x()
    }

    pub fn d_y(&self) -> usize {
        self.emission.d_y()
    }

    pub fn num_leaves(&self) -> usize {
        self.topology.num_leaves()
    }

    pub fn leaf_dynamics(&self, k: usize) -> &NodeDynamics {
        &self.dynamics[self.topology.leaf(k).0]
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.topology;
        let dx = self.d_x();
        self.emission.validate()?;
        if self.dynamics.len() != t.num_nodes() {
            return Err(Error::invalid(format!(
                "{} dynamics entries for {} nodes",
                self.dynamics.len(),
                t.num_nodes()
            )));
        }
        if self.dynamics.iter().any(|d| d.a.shape() != (dx, dx) || d.b.len() != dx) {
            return Err(Error::invalid("node dynamics have the wrong dimension"));
        }
        if self.noise.len() != t.num_leaves() || self.noise.iter().any(|q| q.shape() != (dx, dx)) {
            return Err(Error::invalid("need one d_x × d_x noise covariance per leaf"));
        }
        self.hyperplanes.validate(t, dx)?;
        let p = dx * (dx + 1);
        let pr = &self.priors;
        pr.hierarchy.check()?;
        if pr.hierarchy.sigma_root.nrows() != p {
            return Err(Error::invalid(format!("Σ_ε must be {p} × {p}")));
        }
        if pr.noise.scale.shape() != (dx, dx)
            || pr.emission.mean.shape() != (self.d_y(), dx + 1)
            || pr.emission.col_cov.shape() != (dx + 1, dx + 1)
            || pr.emission.s_scale.shape() != (self.d_y(), self.d_y())
            || pr.initial.mean.len() != dx
            || pr.initial.cov.shape() != (dx, dx)
        {
            return Err(Error::invalid("prior dimensions do not match the model"));
        }
        Ok(())
    }

    /// Leaf transition log-density `log N(x_t | x_{t−1} + A_k x_{t−1} + b_k, Q_k)`.
    pub fn leaf_transition_logdensity(
        &self,
        x_t: &Vector,
        x_prev: &Vector,
        leaf: usize,
    ) -> Result<f64> {
        leaf_transition_logdensity(x_t, x_prev, leaf, self)
    }
}

pub fn leaf_transition_logdensity(
    x_t: &Vector,
    x_prev: &Vector,
    leaf: usize,
    params: &ModelParams,
) -> Result<f64> {
    if leaf >= params.num_leaves() {
        return Err(Error::invalid(format!("leaf index {leaf} out of range")));
    }
    if x_t.len() != params.d_x() || x_prev.len() != params.d_x() {
        return Err(Error::invalid("state dimension mismatch"));
    }
    let chol = cholesky(&params.noise[leaf], "leaf noise covariance")?;
    Ok(log_mvn_chol(x_t, &params.leaf_dynamics(leaf).step(x_prev), &chol))
}

/// One observed sequence `y_1..y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: u64,
    pub y: Vec<Vector>,
}

impl Trial {
    pub fn new(id: u64, y: Vec<Vector>) -> Self {
        Trial { id, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Latent variables of one trial.
///
/// `x[t]` holds `x_t` for `t = 0..=T`; `z[t-1]` is the leaf index of `z_t`.
/// `omega[t-1][j]` is the auxiliary of the `j`-th internal node on the route of
/// `z_t`; `eta[t-1]` holds one auxiliary per output (Bernoulli only).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatentState {
    #[serde(with = "serde_mat::vector_list")]
    pub x: Vec<Vector>,
    pub z: Vec<usize>,
    #[serde(default)]
    pub omega: Vec<Vec<f64>>,
    #[serde(with = "serde_mat::vector_list", default)]
    pub eta: Vec<Vector>,
}

impl LatentState {
    pub fn new(x: Vec<Vector>, z: Vec<usize>) -> Self {
        LatentState { x, z, omega: Vec::new(), eta: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    fn check(&self, trial: &Trial, params: &ModelParams) -> Result<()> {
        if self.z.len() != trial.len() || self.x.len() != trial.len() + 1 {
            return Err(Error::invalid(format!(
                "trial {}: latents do not match {} observations",
                trial.id,
                trial.len()
            )));
        }
        if self.z.iter().any(|&k| k >= params.num_leaves()) {
            return Err(Error::invalid(format!("trial {}: leaf index out of range", trial.id)));
        }
        if trial.y.iter().any(|y| y.len() != params.d_y()) || self.x.iter().any(|x| x.len() != params.d_x()) {
            return Err(Error::invalid(format!("trial {}: dimension mismatch", trial.id)));
        }
        Ok(())
    }
}

/// Additive pieces of the log-joint density.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LogJointTerms {
    pub dynamics_prior: f64,
    pub noise_prior: f64,
    pub hyperplane_prior: f64,
    pub emission_prior: f64,
    pub initial: f64,
    pub transition: f64,
    pub recurrence: f64,
    pub emission: f64,
}

impl LogJointTerms {
    pub fn total(&self) -> f64 {
        self.parameter_prior() + self.initial + self.data_terms()
    }

    pub fn parameter_prior(&self) -> f64 {
        self.dynamics_prior + self.noise_prior + self.hyperplane_prior + self.emission_prior
    }

    /// Transition, recurrence and emission terms.
    pub fn data_terms(&self) -> f64 {
        self.transition + self.recurrence + self.emission
    }
}

fn log_mvn_iso_zero(v: &Vector, var: f64) -> f64 {
    let n = v.len() as f64;
    -0.5 * (n * LN_2PI + n * var.ln() + v.norm_squared() / var)
}

/// Log density of the hierarchical prior over all node dynamics.
pub fn log_dynamics_prior(
    dynamics: &[NodeDynamics],
    topology: &TreeTopology,
    prior: &HierarchyPrior,
) -> Result<f64> {
    let mut total = 0.0;
    let mut chols: Vec<Option<Cholesky<f64, Dyn>>> = vec![None; topology.max_depth() + 1];
    for n in topology.nodes() {
        let Some((parent, _)) = prior.conditional_parent(n, topology, dynamics) else {
            continue;
        };
        let depth = match prior.kind {
            PriorKind::Tree => topology.depth(n),
            PriorKind::Independent => 0,
        };
        if chols[depth].is_none() {
            chols[depth] = Some(cholesky(&prior.node_cov(depth), "dynamics prior covariance")?);
        }
        let mean = parent.map_or_else(|| Vector::zeros(prior.sigma_root.nrows()), |p| p.to_vec());
        total += log_mvn_chol(&dynamics[n.0].to_vec(), &mean, chols[depth].as_ref().unwrap());
    }
    Ok(total)
}

fn log_noise_prior(params: &ModelParams) -> Result<f64> {
    let pr = &params.priors.noise;
    params
        .noise
        .iter()
        .map(|q| log_inv_wishart(q, pr.df, &pr.scale))
        .sum()
}

fn log_hyperplane_prior(params: &ModelParams) -> f64 {
    params
        .hyperplanes
        .iter()
        .map(|(_, h)| log_mvn_iso_zero(&h.stacked(), params.priors.hyperplane_var))
        .sum()
}

/// Log density of the emission prior at the current emission parameters.
pub fn log_emission_prior(emission: &EmissionParams, prior: &EmissionPrior) -> Result<f64> {
    let w = emission.weights();
    let diff = &w - &prior.mean;
    let v_chol = cholesky(&prior.col_cov, "emission prior column covariance")?;
    match emission.kind {
        ObservationKind::Bernoulli => Ok(diff
            .row_iter()
            .map(|r| log_mvn_chol(&r.transpose(), &Vector::zeros(r.len()), &v_chol))
            .sum()),
        ObservationKind::Gaussian => {
            let s = emission.s.as_ref().expect("validated gaussian emission");
            let s_chol = cholesky(s, "emission covariance")?;
            let (dy, p) = (w.nrows() as f64, w.ncols() as f64);
            let quad = (v_chol.inverse() * diff.transpose() * s_chol.inverse() * &diff).trace();
            let mn = -0.5 * (dy * p * LN_2PI + dy * log_det_chol(&v_chol) + p * log_det_chol(&s_chol) + quad);
            Ok(mn + log_inv_wishart(s, prior.s_df, &prior.s_scale)?)
        }
    }
}

/// Per-trial likelihood pieces: (initial, transition, recurrence, emission).
struct TrialTerms(f64, f64, f64, f64);

struct LikelihoodCache {
    noise_chol: Vec<Cholesky<f64, Dyn>>,
    s_chol: Option<Cholesky<f64, Dyn>>,
    x0_chol: Cholesky<f64, Dyn>,
}

impl LikelihoodCache {
    fn new(params: &ModelParams) -> Result<Self> {
        Ok(LikelihoodCache {
            noise_chol: params
                .noise
                .iter()
                .map(|q| cholesky(q, "leaf noise covariance"))
                .collect::<Result<_>>()?,
            s_chol: params
                .emission
                .s
                .as_ref()
                .map(|s| cholesky(s, "emission covariance"))
                .transpose()?,
            x0_chol: cholesky(&params.priors.initial.cov, "initial state covariance")?,
        })
    }
}

fn trial_terms(
    params: &ModelParams,
    leaf_dyn: &[NodeDynamics],
    cache: &LikelihoodCache,
    trial: &Trial,
    latent: &LatentState,
) -> TrialTerms {
    let init = &params.priors.initial;
    let initial = log_mvn_chol(&latent.x[0], &init.mean, &cache.x0_chol);
    let (mut transition, mut recurrence, mut emission) = (0.0, 0.0, 0.0);
    for t in 1..=trial.len() {
        let (prev, cur, k) = (&latent.x[t - 1], &latent.x[t], latent.z[t - 1]);
        transition += log_mvn_chol(cur, &leaf_dyn[k].step(prev), &cache.noise_chol[k]);
        if params.num_leaves() > 1 {
            recurrence += tree_leaf_log_probs(prev, &params.hyperplanes, &params.topology)[k];
        }
        let y = &trial.y[t - 1];
        let mean = params.emission.mean(cur);
        emission += match &cache.s_chol {
            Some(chol) => log_mvn_chol(y, &mean, chol),
            None => y
                .iter()
                .zip(mean.iter())
                .map(|(&yi, &v)| yi * log_sigmoid(v) + (1.0 - yi) * log_sigmoid(-v))
                .sum(),
        };
    }
    TrialTerms(initial, transition, recurrence, emission)
}

fn likelihood_terms(
    params: &ModelParams,
    leaf_dyn: &[NodeDynamics],
    trials: &[Trial],
    latents: &[LatentState],
) -> Result<LogJointTerms> {
    if trials.len() != latents.len() {
        return Err(Error::invalid("one latent state per trial is required"));
    }
    for (trial, latent) in trials.iter().zip(latents) {
        latent.check(trial, params)?;
    }
    let cache = LikelihoodCache::new(params)?;
    let per_trial = map_indexed(trials, |i, trial| {
        trial_terms(params, leaf_dyn, &cache, trial, &latents[i])
    });
    let mut terms = LogJointTerms::default();
    for TrialTerms(i, tr, rec, em) in per_trial {
        terms.initial += i;
        terms.transition += tr;
        terms.recurrence += rec;
        terms.emission += em;
    }
    Ok(terms)
}

fn shared_prior_terms(params: &ModelParams, terms: &mut LogJointTerms) -> Result<()> {
    terms.noise_prior = log_noise_prior(params)?;
    terms.hyperplane_prior = log_hyperplane_prior(params);
    terms.emission_prior = log_emission_prior(&params.emission, &params.priors.emission)?;
    Ok(())
}

pub fn log_joint_terms(
    params: &ModelParams,
    trials: &[Trial],
    latents: &[LatentState],
) -> Result<LogJointTerms> {
    let leaf_dyn: Vec<NodeDynamics> = (0..params.num_leaves())
        .map(|k| params.leaf_dynamics(k).clone())
        .collect();
    let mut terms = likelihood_terms(params, &leaf_dyn, trials, latents)?;
    terms.dynamics_prior =
        log_dynamics_prior(&params.dynamics, &params.topology, &params.priors.hierarchy)?;
    shared_prior_terms(params, &mut terms)?;
    Ok(terms)
}

/// `log p(x, z, y, Θ, Q, Γ, Ψ)` summed over trials, parameter priors counted once.
pub fn log_joint(params: &ModelParams, trials: &[Trial], latents: &[LatentState]) -> Result<f64> {
    Ok(log_joint_terms(params, trials, latents)?.total())
}

/// Residual parameterisation: the root keeps its dynamics, every other node
/// stores its increment over the parent.
pub fn to_residual(dynamics: &[NodeDynamics], topology: &TreeTopology) -> Vec<NodeDynamics> {
    topology
        .nodes()
        .map(|n| match topology.parent(n) {
            None => dynamics[n.0].clone(),
            Some(p) => NodeDynamics::new(
                &dynamics[n.0].a - &dynamics[p.0].a,
                &dynamics[n.0].b - &dynamics[p.0].b,
            ),
        })
        .collect()
}

pub fn from_residual(residual: &[NodeDynamics], topology: &TreeTopology) -> Vec<NodeDynamics> {
    let mut out: Vec<NodeDynamics> = residual.to_vec();
    // Node ids are breadth-first, so parents are final before their children.
    for n in topology.nodes() {
        if let Some(p) = topology.parent(n) {
            let (pa, pb) = (out[p.0].a.clone(), out[p.0].b.clone());
            out[n.0].a = &residual[n.0].a + pa;
            out[n.0].b = &residual[n.0].b + pb;
        }
    }
    out
}

/// Log-joint of the residual model: residuals are independent
/// `N(0, λ^depth Σ_ε)` and each leaf uses the sum of residuals along its path.
pub fn residual_log_joint_terms(
    residual: &[NodeDynamics],
    params: &ModelParams,
    trials: &[Trial],
    latents: &[LatentState],
) -> Result<LogJointTerms> {
    let prior = &params.priors.hierarchy;
    if prior.kind != PriorKind::Tree {
        return Err(Error::invalid("the residual model needs the tree prior"));
    }
    let topology = &params.topology;
    let dim = params.d_x();
    let leaf_dyn: Vec<NodeDynamics> = topology
        .leaves()
        .iter()
        .map(|&leaf| {
            let path = topology.path(leaf).expect("leaf belongs to the tree");
            path.iter().fold(NodeDynamics::zeros(dim), |acc, j| {
                NodeDynamics::new(acc.a + &residual[j.0].a, acc.b + &residual[j.0].b)
            })
        })
        .collect();
    let mut terms = likelihood_terms(params, &leaf_dyn, trials, latents)?;
    let zero = Vector::zeros(prior.sigma_root.nrows());
    let mut dyn_prior = 0.0;
    for n in topology.nodes() {
        let chol = cholesky(&prior.node_cov(topology.depth(n)), "residual prior covariance")?;
        dyn_prior += log_mvn_chol(&residual[n.0].to_vec(), &zero, &chol);
    }
    terms.dynamics_prior = dyn_prior;
    shared_prior_terms(params, &mut terms)?;
    Ok(terms)
}

pub fn residual_log_joint(
    residual: &[NodeDynamics],
    params: &ModelParams,
    trials: &[Trial],
    latents: &[LatentState],
) -> Result<f64> {
    Ok(residual_log_joint_terms(residual, params, trials, latents)?.total())
}

/// Ancestral draw of all node dynamics from the hierarchical prior.
pub fn sample_prior_dynamics<R: Rng + ?Sized>(
    prior: &HierarchyPrior,
    topology: &TreeTopology,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<NodeDynamics>> {
    prior.check()?;
    if prior.sigma_root.nrows() != dim * (dim + 1) {
        return Err(Error::invalid("Σ_ε does not match the state dimension"));
    }
    let mut out = vec![NodeDynamics::zeros(dim); topology.num_nodes()];
    for n in topology.nodes() {
        let Some((parent, cov)) = prior.conditional_parent(n, topology, &out) else {
            continue;
        };
        let mean = parent.map_or_else(|| Vector::zeros(dim * (dim + 1)), |p| p.to_vec());
        let v = sample_gaussian(&mean, &cov, rng, "dynamics prior covariance")?;
        out[n.0] = NodeDynamics::from_vec(&v, dim);
    }
    Ok(out)
}

/// Ancestral draw of every parameter block from its prior.
pub fn sample_prior_params<R: Rng + ?Sized>(
    priors: &Priors,
    topology: &TreeTopology,
    kind: ObservationKind,
    rng: &mut R,
) -> Result<ModelParams> {
    let dx = priors.initial.mean.len();
    let dy = priors.emission.mean.nrows();
    let dynamics = sample_prior_dynamics(&priors.hierarchy, topology, dx, rng)?;
    let noise = (0..topology.num_leaves())
        .map(|_| sample_inv_wishart(priors.noise.df, &priors.noise.scale, rng))
        .collect::<Result<Vec<_>>>()?;
    let mut hyperplanes = HyperplaneSet::zeros(topology, dx);
    let sd = priors.hyperplane_var.sqrt();
    for &n in topology.internal_nodes() {
        let v = std_normal_vec(dx + 1, rng) * sd;
        hyperplanes.set(n, Hyperplane::from_stacked(&v));
    }
    let ep = &priors.emission;
    let v_root = psd_sqrt(&ep.col_cov);
    let (s, row_root) = match kind {
        ObservationKind::Gaussian => {
            let s = sample_inv_wishart(ep.s_df, &ep.s_scale, rng)?;
            let root = psd_sqrt(&s);
            (Some(s), root)
        }
        ObservationKind::Bernoulli => (None, Mat::identity(dy, dy)),
    };
    // W = M + S^{1/2} E V^{1/2} has vec covariance V ⊗ S.
    let e = crate::linalg::std_normal_mat(dy, dx + 1, rng);
    let w = &ep.mean + row_root * e * v_root;
    let mut emission = EmissionParams { kind, c: Mat::zeros(dy, dx), d: Vector::zeros(dy), s };
    emission.set_weights(&w);
    let params = ModelParams {
        topology: topology.clone(),
        dynamics,
        noise,
        hyperplanes,
        emission,
        priors: priors.clone(),
    };
    params.validate()?;
    Ok(params)
}

/// One simulated trial with its latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub x: Vec<Vector>,
    pub z: Vec<usize>,
    pub y: Vec<Vector>,
}

/// Draws `z_t`, `x_t` and `y_t` for `t = 1..T` starting from `x0`.
pub fn simulate<R: Rng + ?Sized>(
    params: &ModelParams,
    x0: &Vector,
    steps: usize,
    rng: &mut R,
) -> Result<Simulation> {
    if steps == 0 {
        return Err(Error::invalid("simulation needs T ≥ 1"));
    }
    if x0.len() != params.d_x() {
        return Err(Error::invalid("initial state has the wrong dimension"));
    }
    let noise_root: Vec<Mat> = params.noise.iter().map(psd_sqrt).collect();
    let s_root = params.emission.s.as_ref().map(psd_sqrt);
    let mut x = Vec::with_capacity(steps + 1);
    let mut z = Vec::with_capacity(steps);
    let mut y = Vec::with_capacity(steps);
    x.push(x0.clone());
    for t in 1..=steps {
        let prev = &x[t - 1];
        let k = sample_leaf(prev, &params.hyperplanes, &params.topology, rng);
        let next = params.leaf_dynamics(k).step(prev) + &noise_root[k] * std_normal_vec(params.d_x(), rng);
        y.push(observe_state(&params.emission, s_root.as_ref(), &next, rng));
        z.push(k);
        x.push(next);
    }
    Ok(Simulation { x, z, y })
}

/// Emission draw given `x_t`; `s_root` is the symmetric root of `S`.
pub(crate) fn observe_state<R: Rng + ?Sized>(
    emission: &EmissionParams,
    s_root: Option<&Mat>,
    x: &Vector,
    rng: &mut R,
) -> Vector {
    let mean = emission.mean(x);
    match emission.kind {
        ObservationKind::Gaussian => {
            let root = s_root.expect("gaussian emission has S");
            mean + root * std_normal_vec(emission.d_y(), rng)
        }
        ObservationKind::Bernoulli => mean.map(|v| {
            if rng.random::<f64>() < crate::linalg::sigmoid(v) {
                1.0
            } else {
                0.0
            }
        }),
    }
}
