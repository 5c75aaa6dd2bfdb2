//! Starting point for the sampler.
//!
//! Emissions and continuous states come from probabilistic PCA. Dynamics and
//! hyperplanes are fitted greedily one tree level at a time: the root by least
//! squares, each deeper level by momentum gradient descent on the soft-gated
//! one-step squared error with shallower levels frozen. Discrete states are
//! the most probable leaf under the fitted gates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::ChainState;
use crate::linalg::{augment, inverse_spd, sigmoid, symmetrize, Mat, Vector};
use crate::model::{
    EmissionParams, LatentState, ModelParams, NodeDynamics, ObservationKind, Priors, Trial,
};
use crate::stick_breaking::{node_log_sticks, tree_leaf_probs, Hyperplane, HyperplaneSet};
use crate::tree::{NodeId, TreeTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub step_size: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Transitions per gradient step; `None` uses the full batch.
    pub minibatch: Option<usize>,
    /// Standard deviation, in time bins, of the kernel that smooths binary data.
    pub smoothing_width: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { step_size: 1e-3, momentum: 0.9, epochs: 200, minibatch: None, smoothing_width: 5.0 }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("init.step_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("init.momentum must lie in [0, 1)"));
        }
        if self.minibatch == Some(0) {
            return Err(Error::invalid("init.minibatch must be positive"));
        }
        if !(self.smoothing_width > 0.0 && self.smoothing_width.is_finite()) {
            return Err(Error::invalid("init.smoothing_width must be positive"));
        }
        Ok(())
    }
}

/// Maximum-likelihood PPCA fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Ppca {
    /// Loading matrix `d_y × d_x`.
    pub c: Mat,
    /// Data mean.
    pub d: Vector,
    /// Isotropic noise variance.
    pub noise_var: f64,
    /// Posterior-mean latent coordinates, one sequence per input sequence.
    pub x: Vec<Vec<Vector>>,
}

impl Ppca {
    /// Posterior mean of the latent coordinates of `y`.
    pub fn project(&self, y: &Vector) -> Vector {
        let dx = self.c.ncols();
        let m = self.c.transpose() * &self.c + Mat::identity(dx, dx) * self.noise_var;
        let rhs = self.c.transpose() * (y - &self.d);
        m.lu().solve(&rhs).unwrap_or_else(|| Vector::zeros(dx))
    }
}

const DEGENERATE_TOL: f64 = 1e-12;

/// Closed-form PPCA: loadings `U (Λ − σ² I)^{1/2}` from the leading
/// eigenpairs of the sample covariance, `σ²` the mean discarded eigenvalue.
pub fn ppca_init(sequences: &[Vec<Vector>], d_x: usize) -> Result<Ppca> {
    let d_y = sequences.iter().flatten().next().map(|y| y.len()).ok_or_else(|| Error::invalid("no observations"))?;
    if d_x == 0 || d_x > d_y {
        return Err(Error::invalid(format!("latent dimension {d_x} must lie in 1..={d_y}")));
    }
    let n = sequences.iter().map(|s| s.len()).sum::<usize>() as f64;
    let mean = sequences.iter().flatten().fold(Vector::zeros(d_y), |acc, y| acc + y) / n;
    let mut cov = Mat::zeros(d_y, d_y);
    for y in sequences.iter().flatten() {
        let c = y - &mean;
        cov += &c * c.transpose();
    }
    cov = symmetrize(&(cov / n));
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d_y).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let noise_var = if d_x < d_y {
        order[d_x..].iter().map(|&i| eig.eigenvalues[i].max(0.0)).sum::<f64>() / (d_y - d_x) as f64
    } else {
        0.0
    };
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut c = Mat::zeros(d_y, d_x);
    for (j, &i) in order[..d_x].iter().enumerate() {
        let excess = eig.eigenvalues[i] - noise_var;
        if excess <= DEGENERATE_TOL * scale {
            return Err(Error::ill_posed(format!(
                "data covariance has fewer than {d_x} directions above the noise floor"
            )));
        }
        c.set_column(j, &(eig.eigenvectors.column(i) * excess.sqrt()));
    }
    let mut fit = Ppca { c, d: mean, noise_var, x: Vec::new() };
    fit.x = sequences.iter().map(|s| s.iter().map(|y| fit.project(y)).collect()).collect();
    Ok(fit)
}

/// Per-output white-noise variance from second differences,
/// `median((y_{t+1} − 2y_t + y_{t−1})²) / (6 · median(χ²₁))`. Smooth signal
/// components contribute little to second differences and the median
/// discounts the occasional fast transient. `None` without any triple.
pub fn difference_noise_var(sequences: &[Vec<Vector>]) -> Option<Vector> {
    const MEDIAN_CHI2_1: f64 = 0.454_936_423_119_572_8;
    let d_y = sequences.iter().flatten().next()?.len();
    let mut per_dim: Vec<Vec<f64>> = vec![Vec::new(); d_y];
    for s in sequences {
        for w in s.windows(3) {
            let dd = &w[2] - &w[1] * 2.0 + &w[0];
            for (j, v) in dd.iter().enumerate() {
                per_dim[j].push(v * v);
            }
        }
    }
    if per_dim[0].is_empty() {
        return None;
    }
    Some(Vector::from_iterator(
        d_y,
        per_dim.iter_mut().map(|v| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let med = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
            med / (6.0 * MEDIAN_CHI2_1)
        }),
    ))
}

/// Gaussian-kernel smoothing along time, renormalised at the edges.
pub fn smooth_sequence(y: &[Vector], width: f64) -> Vec<Vector> {
    let reach = (3.0 * width).ceil() as isize;
    let weights: Vec<f64> = (-reach..=reach).map(|o| (-(o as f64).powi(2) / (2.0 * width * width)).exp()).collect();
    let len = y.len() as isize;
    (0..len)
        .map(|t| {
            let mut acc = Vector::zeros(y[t as usize].len());
            let mut total = 0.0;
            for (w, o) in weights.iter().zip(-reach..=reach) {
                let s = t + o;
                if (0..len).contains(&s) {
                    acc += &y[s as usize] * *w;
                    total += w;
                }
            }
            acc / total
        })
        .collect()
}

const RATE_FLOOR: f64 = 0.02;

/// Smoothed firing rates mapped to the logit scale.
pub fn smoothed_logits(y: &[Vector], width: f64) -> Vec<Vector> {
    smooth_sequence(y, width)
        .into_iter()
        .map(|r| r.map(|p| {
            let p = p.clamp(RATE_FLOOR, 1.0 - RATE_FLOOR);
            (p / (1.0 - p)).ln()
        }))
        .collect()
}

/// Dynamics, hyperplanes and the training loss after each level.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyFit {
    /// Indexed by node id.
    pub dynamics: Vec<NodeDynamics>,
    pub hyperplanes: HyperplaneSet,
    /// Mean squared one-step error after the root fit and after each level.
    pub level_losses: Vec<f64>,
}

struct Transition {
    x: Vector,
    xt: Vector,
    dx: Vector,
}

fn transitions(sequences: &[Vec<Vector>]) -> Vec<Transition> {
    sequences
        .iter()
        .flat_map(|s| s.windows(2).map(|w| Transition { x: w[0].clone(), xt: augment(&w[0]), dx: &w[1] - &w[0] }))
        .collect()
}

/// Least-squares `[A b]` with a tiny ridge for numerical safety.
fn ols(data: &[Transition], dim: usize) -> Result<Mat> {
    if data.len() < dim + 1 {
        return Err(Error::ill_posed(format!(
            "{} transitions cannot determine {} regression coefficients",
            data.len(),
            dim + 1
        )));
    }
    let mut xx = Mat::zeros(dim + 1, dim + 1);
    let mut yx = Mat::zeros(dim, dim + 1);
    for tr in data {
        xx += &tr.xt * tr.xt.transpose();
        yx += &tr.dx * tr.xt.transpose();
    }
    let ridge = 1e-9 * xx.trace() / (dim + 1) as f64;
    let inv = inverse_spd(&(xx + Mat::identity(dim + 1, dim + 1) * ridge.max(1e-300)), "regressor scatter")
        .map_err(|_| Error::ill_posed("transition regressors are degenerate"))?;
    Ok(yx * inv)
}

/// Hyperplane through the weighted mean along the leading weighted principal axis.
fn principal_split(data: &[Transition], weights: &[f64], dim: usize) -> Hyperplane {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Hyperplane::zeros(dim);
    }
    let mean = data.iter().zip(weights).fold(Vector::zeros(dim), |acc, (t, w)| acc + &t.x * *w) / total;
    let mut cov = Mat::zeros(dim, dim);
    for (t, w) in data.iter().zip(weights) {
        let c = &t.x - &mean;
        cov += &c * c.transpose() * *w;
    }
    let eig = symmetrize(&(cov / total)).symmetric_eigen();
    let i = eig.eigenvalues.imax();
    let var = eig.eigenvalues[i];
    if !(var > 0.0) {
        return Hyperplane::zeros(dim);
    }
    let mut dir = eig.eigenvectors.column(i).into_owned();
    // Deterministic orientation: largest-magnitude component positive.
    if dir[dir.iamax()] < 0.0 {
        dir = -dir;
    }
    let weight = dir / var.sqrt();
    let offset = -weight.dot(&mean);
    Hyperplane::new(weight, offset)
}

fn mse(data: &[Transition], pred: impl Fn(usize) -> Vector) -> f64 {
    let d = data[0].dx.len() as f64;
    data.iter().enumerate().map(|(i, t)| (pred(i) - &t.dx).norm_squared()).sum::<f64>() / (data.len() as f64 * d)
}

/// Greedy level-wise fit of every node's dynamics and every hyperplane.
pub fn greedy_tree_fit(sequences: &[Vec<Vector>], topology: &TreeTopology, config: &InitConfig) -> Result<GreedyFit> {
    config.validate()?;
    let dim = sequences.iter().flatten().next().map(|x| x.len()).ok_or_else(|| Error::invalid("no states"))?;
    let data = transitions(sequences);
    let root = NodeDynamics::from_stacked(&ols(&data, dim)?);
    let mut dynamics = vec![root.clone(); topology.num_nodes()];
    let mut hyperplanes = HyperplaneSet::zeros(topology, dim);
    let mut losses = vec![mse(&data, |i| root.stacked() * &data[i].xt)];
    if config.epochs == 0 {
        for n in topology.nodes() {
            if let Some(p) = topology.parent(n) {
                dynamics[n.0] = dynamics[p.0].clone();
            }
        }
        return Ok(GreedyFit { dynamics, hyperplanes, level_losses: losses });
    }
    for level in 1..=topology.max_depth() {
        let prev = *losses.last().expect("root loss");
        let loss = fit_level(&data, topology, level, prev, &mut dynamics, &mut hyperplanes, config);
        losses.push(loss);
    }
    Ok(GreedyFit { dynamics, hyperplanes, level_losses: losses })
}

/// Fits the hyperplanes at depth `level − 1` and the dynamics at depth `level`.
fn fit_level(
    data: &[Transition],
    topology: &TreeTopology,
    level: usize,
    prev_loss: f64,
    dynamics: &mut [NodeDynamics],
    hyperplanes: &mut HyperplaneSet,
    config: &InitConfig,
) -> f64 {
    let dim = data[0].x.len();
    let parents: Vec<NodeId> =
        topology.nodes_at_depth(level - 1).into_iter().filter(|&n| !topology.is_leaf(n)).collect();
    let fixed: Vec<NodeId> = topology.frontier(level - 1).into_iter().filter(|&n| topology.is_leaf(n)).collect();
    // Path probabilities of the splitting parents and the fixed contribution of shallower leaves.
    let sticks: Vec<Vec<f64>> = data.iter().map(|t| node_log_sticks(&t.x, hyperplanes, topology)).collect();
    let reach: Vec<Vec<f64>> = sticks.iter().map(|s| parents.iter().map(|m| s[m.0].exp()).collect()).collect();
    let base: Vec<Vector> = data
        .iter()
        .zip(&sticks)
        .map(|(t, s)| {
            fixed
                .iter()
                .fold(Vector::zeros(dim), |acc, n| acc + dynamics[n.0].stacked() * &t.xt * s[n.0].exp())
        })
        .collect();

    // Children start at their parent (zero residual), gates at a principal split.
    let mut planes: Vec<Vector> = Vec::with_capacity(parents.len());
    let mut weights: Vec<(Mat, Mat)> = Vec::with_capacity(parents.len());
    for (j, &m) in parents.iter().enumerate() {
        let w: Vec<f64> = reach.iter().map(|r| r[j]).collect();
        planes.push(principal_split(data, &w, dim).stacked());
        let p = dynamics[m.0].stacked();
        weights.push((p.clone(), p));
    }

    let predict = |planes: &[Vector], weights: &[(Mat, Mat)], i: usize| -> Vector {
        let t = &data[i];
        let mut out = base[i].clone();
        for j in 0..planes.len() {
            let nu = planes[j].dot(&t.xt);
            let (l, r) = &weights[j];
            out += (l * &t.xt * sigmoid(nu) + r * &t.xt * sigmoid(-nu)) * reach[i][j];
        }
        out
    };
    let loss_of = |planes: &[Vector], weights: &[(Mat, Mat)]| mse(data, |i| predict(planes, weights, i));

    let mut best = (loss_of(&planes, &weights), planes.clone(), weights.clone());
    let mut v_planes: Vec<Vector> = planes.iter().map(|p| Vector::zeros(p.len())).collect();
    let mut v_weights: Vec<(Mat, Mat)> =
        weights.iter().map(|(l, _)| (Mat::zeros(l.nrows(), l.ncols()), Mat::zeros(l.nrows(), l.ncols()))).collect();
    let batch = config.minibatch.unwrap_or(data.len()).min(data.len());
    let scale = 2.0 / dim as f64;
    for _ in 0..config.epochs {
        for start in (0..data.len()).step_by(batch) {
            let idx = start..(start + batch).min(data.len());
            let count = idx.len() as f64;
            let mut g_planes: Vec<Vector> = planes.iter().map(|p| Vector::zeros(p.len())).collect();
            let mut g_weights: Vec<(Mat, Mat)> =
                weights.iter().map(|(l, _)| (Mat::zeros(l.nrows(), l.ncols()), Mat::zeros(l.nrows(), l.ncols()))).collect();
            for i in idx {
                let t = &data[i];
                let e = (predict(&planes, &weights, i) - &t.dx) * (scale / count);
                for j in 0..planes.len() {
                    let nu = planes[j].dot(&t.xt);
                    let (sl, sr) = (sigmoid(nu), sigmoid(-nu));
                    let p = reach[i][j];
                    let (l, r) = &weights[j];
                    g_weights[j].0 += &e * t.xt.transpose() * (p * sl);
                    g_weights[j].1 += &e * t.xt.transpose() * (p * sr);
                    let dpred = (l - r) * &t.xt * (p * sl * sr);
                    g_planes[j] += &t.xt * e.dot(&dpred);
                }
            }
            for j in 0..planes.len() {
                v_planes[j] = &v_planes[j] * config.momentum - &g_planes[j] * config.step_size;
                v_weights[j].0 = &v_weights[j].0 * config.momentum - &g_weights[j].0 * config.step_size;
                v_weights[j].1 = &v_weights[j].1 * config.momentum - &g_weights[j].1 * config.step_size;
                planes[j] += &v_planes[j];
                weights[j].0 += &v_weights[j].0;
                weights[j].1 += &v_weights[j].1;
            }
        }
        let loss = loss_of(&planes, &weights);
        if loss.is_finite() && loss < best.0 {
            best = (loss, planes.clone(), weights.clone());
        } else if !loss.is_finite() {
            break;
        }
    }

    let (loss, planes, weights) = best;
    // Children equal to their parent reproduce the previous level exactly.
    let improved = loss < prev_loss;
    for (j, &m) in parents.iter().enumerate() {
        hyperplanes.set(m, Hyperplane::from_stacked(&planes[j]));
        let (l, r) = topology.children(m).expect("internal node");
        if improved {
            dynamics[l.0] = NodeDynamics::from_stacked(&weights[j].0);
            dynamics[r.0] = NodeDynamics::from_stacked(&weights[j].1);
        } else {
            dynamics[l.0] = dynamics[m.0].clone();
            dynamics[r.0] = dynamics[m.0].clone();
        }
    }
    if improved {
        loss
    } else {
        prev_loss
    }
}

/// Most probable leaf for every transition, ties to the lowest index.
pub fn hard_assign(x: &[Vector], hyperplanes: &HyperplaneSet, topology: &TreeTopology) -> Vec<usize> {
    x[..x.len().saturating_sub(1)].iter().map(|xt| tree_leaf_probs(xt, hyperplanes, topology).argmax()).collect()
}

/// Continuous-state estimates for data that PPCA has not seen, used to start
/// latent-only sampling: the PPCA projection of (smoothed logit) observations.
pub fn project_observations(y: &[Vector], emission: &EmissionParams, smoothing_width: f64) -> Vec<Vector> {
    let targets = match emission.kind {
        ObservationKind::Gaussian => y.to_vec(),
        ObservationKind::Bernoulli => smoothed_logits(y, smoothing_width),
    };
    let c = &emission.c;
    let dx = c.ncols();
    let gram = c.transpose() * c + Mat::identity(dx, dx) * 1e-9;
    let lu = gram.lu();
    let mut x: Vec<Vector> =
        targets.iter().map(|t| lu.solve(&(c.transpose() * (t - &emission.d))).unwrap_or_else(|| Vector::zeros(dx))).collect();
    let first = x.first().cloned().unwrap_or_else(|| Vector::zeros(dx));
    x.insert(0, first);
    x
}

/// Full initialisation of parameters and latents.
pub fn initialize(
    trials: &[Trial],
    kind: ObservationKind,
    topology: &TreeTopology,
    d_x: usize,
    priors: &Priors,
    config: &InitConfig,
) -> Result<ChainState> {
    config.validate()?;
    if trials.is_empty() || trials.iter().any(|t| t.len() < 2) {
        return Err(Error::invalid("initialisation needs trials with at least two observations"));
    }
    let targets: Vec<Vec<Vector>> = match kind {
        ObservationKind::Gaussian => trials.iter().map(|t| t.y.clone()).collect(),
        ObservationKind::Bernoulli => trials.iter().map(|t| smoothed_logits(&t.y, config.smoothing_width)).collect(),
    };
    let ppca = ppca_init(&targets, d_x)?;
    // x_0 has no observation; start it at x_1.
    let states: Vec<Vec<Vector>> = ppca
        .x
        .iter()
        .map(|s| std::iter::once(s[0].clone()).chain(s.iter().cloned()).collect())
        .collect();
    let fit = greedy_tree_fit(&ppca.x, topology, config)?;
    let latents: Vec<LatentState> = states
        .into_iter()
        .map(|x| {
            let z = hard_assign(&x, &fit.hyperplanes, topology);
            LatentState::new(x, z)
        })
        .collect();

    let mut dynamics = fit.dynamics;
    let mut hyperplanes = fit.hyperplanes;
    if priors.hierarchy.kind == crate::model::PriorKind::Independent {
        for &n in topology.internal_nodes() {
            dynamics[n.0] = NodeDynamics::zeros(d_x);
        }
    }
    for (_, h) in hyperplanes.iter_mut() {
        if !(h.weight.iter().all(|v| v.is_finite()) && h.offset.is_finite()) {
            *h = Hyperplane::zeros(d_x);
        }
    }
    let noise = (0..topology.num_leaves())
        .map(|k| {
            let leaf = &dynamics[topology.leaf(k).0];
            let mut scatter = Mat::zeros(d_x, d_x);
            let mut count = 0.0;
            for lat in &latents {
                for (t, &z) in lat.z.iter().enumerate() {
                    if z == k {
                        let r = &lat.x[t + 1] - leaf.step(&lat.x[t]);
                        scatter += &r * r.transpose();
                        count += 1.0;
                    }
                }
            }
            symmetrize(&((&priors.noise.scale + scatter) / (priors.noise.df + count + d_x as f64 + 1.0)))
        })
        .collect();
    let emission = match kind {
        ObservationKind::Gaussian => {
            let d_y = ppca.d.len();
            let mut scatter = Mat::zeros(d_y, d_y);
            let mut count = 0.0;
            for (trial, lat) in trials.iter().zip(&latents) {
                for (t, y) in trial.y.iter().enumerate() {
                    let r = y - &ppca.c * &lat.x[t + 1] - &ppca.d;
                    scatter += &r * r.transpose();
                    count += 1.0;
                }
            }
            // With d_x = d_y the projection reproduces y exactly and the
            // residuals say nothing about the noise level.
            if d_x == d_y {
                if let Some(var) = difference_noise_var(&targets) {
                    scatter = Mat::from_diagonal(&var) * count;
                }
            }
            let s = (&priors.emission.s_scale + scatter) / (priors.emission.s_df + count + d_y as f64 + 1.0);
            EmissionParams::gaussian(ppca.c.clone(), ppca.d.clone(), symmetrize(&s))
        }
        ObservationKind::Bernoulli => EmissionParams::bernoulli(ppca.c.clone(), ppca.d.clone()),
    };
    let params = ModelParams {
        topology: topology.clone(),
        dynamics,
        noise,
        hyperplanes,
        emission,
        priors: priors.clone(),
    };
    params.validate()?;
    Ok(ChainState { params, latents })
}
