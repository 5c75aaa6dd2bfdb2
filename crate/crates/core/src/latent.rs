//! Latent-state blocks: information-form forward filtering / backward sampling
//! of `x_{0:T}` with the Pólya-Gamma augmented gates, and the per-step
//! categorical draws of `z_t`.

use nalgebra::{Cholesky, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, inverse_spd, log_mvn_chol, std_normal_vec, symmetrize, Mat, Vector};
use crate::model::{LatentState, ModelParams, ObservationKind, Trial};
use crate::stick_breaking::{sample_categorical, tree_leaf_log_probs};

/// Gaussian message in information form: density `∝ exp(−½ xᵀJx + hᵀx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMessage {
    pub info: Vector,
    pub precision: Mat,
}

struct LeafTerms {
    /// `Q⁻¹`
    q_inv: Mat,
    /// `Fᵀ Q⁻¹ F` with `F = I + A`
    ftqf: Mat,
    /// `−Q⁻¹ F`, the `(t, t−1)` block of the joint precision
    cross: Mat,
    /// `Q⁻¹ b`
    qb: Vector,
    /// `Fᵀ Q⁻¹ b`
    ftqb: Vector,
    chol: Cholesky<f64, Dyn>,
}

/// Quantities derived from the parameters once per sweep and shared by all trials.
pub struct LatentCache {
    leaves: Vec<LeafTerms>,
    x0_prec: Mat,
    x0_info: Vector,
    /// `Cᵀ S⁻¹ C` and `Cᵀ S⁻¹` for Gaussian emissions.
    emission: Option<(Mat, Mat)>,
}

impl LatentCache {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let dx = params.d_x();
        let leaves = (0..params.num_leaves())
            .map(|k| {
                let dynamics = params.leaf_dynamics(k);
                let chol = cholesky(&params.noise[k], "leaf noise covariance")?;
                let q_inv = symmetrize(&chol.inverse());
                let f = Mat::identity(dx, dx) + &dynamics.a;
                let qf = &q_inv * &f;
                let qb = &q_inv * &dynamics.b;
                Ok(LeafTerms {
                    ftqf: symmetrize(&(f.transpose() * &qf)),
                    cross: -qf,
                    ftqb: f.transpose() * &qb,
                    qb,
                    q_inv,
                    chol,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let init = &params.priors.initial;
        let x0_prec = inverse_spd(&init.cov, "initial state covariance")?;
        let x0_info = &x0_prec * &init.mean;
        let emission = match params.emission.kind {
            ObservationKind::Gaussian => {
                let s = params.emission.s.as_ref().expect("validated gaussian emission");
                let s_inv = inverse_spd(s, "emission covariance")?;
                let cts = params.emission.c.transpose() * s_inv;
                Some((symmetrize(&(&cts * &params.emission.c)), cts))
            }
            ObservationKind::Bernoulli => None,
        };
        Ok(LatentCache { leaves, x0_prec, x0_info, emission })
    }
}

/// Node potentials `(J_t, h_t)` and cross blocks `L_t` of the joint Gaussian
/// conditional of `x_{0:T}` given `z`, `ω`, `η` and the data.
pub fn joint_potentials(
    trial: &Trial,
    latent: &LatentState,
    params: &ModelParams,
    cache: &LatentCache,
) -> Result<(Vec<GaussianMessage>, Vec<Mat>)> {
    let steps = trial.len();
    let dx = params.d_x();
    check_shapes(trial, latent, params)?;
    let mut nodes = vec![
        GaussianMessage { info: Vector::zeros(dx), precision: Mat::zeros(dx, dx) };
        steps + 1
    ];
    let mut cross = Vec::with_capacity(steps);
    nodes[0].precision += &cache.x0_prec;
    nodes[0].info += &cache.x0_info;
    let topology = &params.topology;
    for t in 1..=steps {
        let k = latent.z[t - 1];
        let leaf = &cache.leaves[k];
        nodes[t].precision += &leaf.q_inv;
        nodes[t].info += &leaf.qb;
        nodes[t - 1].precision += &leaf.ftqf;
        nodes[t - 1].info -= &leaf.ftqb;
        cross.push(leaf.cross.clone());

        // Augmented gate factors N(ν | κ/ω, 1/ω) on x_{t−1}.
        for (j, turn) in topology.route(k).iter().enumerate() {
            let plane = params.hyperplanes.plane(turn.node);
            let omega = latent.omega[t - 1][j];
            let kappa = crate::conjugate::recurrence_kappa(turn.left);
            nodes[t - 1].precision += &plane.weight * plane.weight.transpose() * omega;
            nodes[t - 1].info += &plane.weight * (kappa - omega * plane.offset);
        }

        let y = &trial.y[t - 1];
        let em = &params.emission;
        match &cache.emission {
            Some((ctsc, cts)) => {
                nodes[t].precision += ctsc;
                nodes[t].info += cts * (y - &em.d);
            }
            None => {
                let eta = &latent.eta[t - 1];
                let mut weighted = em.c.clone();
                for (i, mut row) in weighted.row_iter_mut().enumerate() {
                    row *= eta[i];
                }
                nodes[t].precision += symmetrize(&(em.c.transpose() * &weighted));
                let pseudo = Vector::from_fn(em.d_y(), |i, _| (y[i] - 0.5) - eta[i] * em.d[i]);
                nodes[t].info += em.c.transpose() * pseudo;
            }
        }
    }
    Ok((nodes, cross))
}

fn check_shapes(trial: &Trial, latent: &LatentState, params: &ModelParams) -> Result<()> {
    let steps = trial.len();
    if steps == 0 {
        return Err(Error::invalid(format!("trial {} is empty", trial.id)));
    }
    if latent.z.len() != steps {
        return Err(Error::invalid(format!("trial {}: z has the wrong length", trial.id)));
    }
    if params.num_leaves() > 1 && latent.omega.len() != steps {
        return Err(Error::invalid(format!("trial {}: recurrence auxiliaries missing", trial.id)));
    }
    if params.emission.kind == ObservationKind::Bernoulli && latent.eta.len() != steps {
        return Err(Error::invalid(format!("trial {}: emission auxiliaries missing", trial.id)));
    }
    Ok(())
}

/// Forward information filter: returns the filtered messages `(Jf_t, hf_t)`.
pub fn forward_filter(nodes: &[GaussianMessage], cross: &[Mat]) -> Result<Vec<GaussianMessage>> {
    let mut out: Vec<GaussianMessage> = Vec::with_capacity(nodes.len());
    out.push(nodes[0].clone());
    for t in 1..nodes.len() {
        let prev = &out[t - 1];
        let chol = cholesky(&prev.precision, "filtered precision")
            .map_err(|e| Error::numeric(format!("step {}: {e}", t - 1)))?;
        let l = &cross[t - 1];
        // L Jf⁻¹ Lᵀ and L Jf⁻¹ hf
        let sol = chol.solve(&l.transpose());
        let precision = symmetrize(&(&nodes[t].precision - l * sol));
        let info = &nodes[t].info - l * chol.solve(&prev.info);
        out.push(GaussianMessage { info, precision });
    }
    Ok(out)
}

/// Exact joint draw of `x_{0:T}` given `z`, `ω`, `η`.
pub fn ffbs_continuous<R: Rng + ?Sized>(
    trial: &Trial,
    latent: &LatentState,
    params: &ModelParams,
    cache: &LatentCache,
    rng: &mut R,
) -> Result<Vec<Vector>> {
    let (nodes, cross) = joint_potentials(trial, latent, params, cache)?;
    let filtered = forward_filter(&nodes, &cross)?;
    let steps = nodes.len() - 1;
    let mut x = vec![Vector::zeros(params.d_x()); steps + 1];
    for t in (0..=steps).rev() {
        let msg = &filtered[t];
        let info = if t == steps {
            msg.info.clone()
        } else {
            &msg.info - cross[t].transpose() * &x[t + 1]
        };
        let chol = cholesky(&msg.precision, "filtered precision")
            .map_err(|e| Error::numeric(format!("step {t}: {e}")))?;
        let mean = chol.solve(&info);
        let z = std_normal_vec(mean.len(), rng);
        let noise = chol
            .l_dirty()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("positive cholesky diagonal");
        x[t] = mean + noise;
    }
    if x.iter().any(|v| v.iter().any(|e| !e.is_finite())) {
        return Err(Error::numeric(format!("trial {}: non-finite state draw", trial.id)));
    }
    Ok(x)
}

/// Unnormalised `log p(x_t | x_{t−1}, k) + log π_k(x_{t−1})` over leaves.
pub fn discrete_log_weights(
    prev: &Vector,
    cur: &Vector,
    params: &ModelParams,
    cache: &LatentCache,
) -> Vec<f64> {
    let gate = if params.num_leaves() > 1 {
        tree_leaf_log_probs(prev, &params.hyperplanes, &params.topology)
    } else {
        vec![0.0]
    };
    (0..params.num_leaves())
        .map(|k| gate[k] + log_mvn_chol(cur, &params.leaf_dynamics(k).step(prev), &cache.leaves[k].chol))
        .collect()
}

/// Normalises log-weights with max subtraction.
pub fn normalize_log_weights(logw: &[f64]) -> Result<Vec<f64>> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numeric("every leaf has zero probability"));
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Independent draws of `z_t` given the continuous states.
pub fn sample_discrete<R: Rng + ?Sized>(
    x: &[Vector],
    params: &ModelParams,
    cache: &LatentCache,
    rng: &mut R,
) -> Result<Vec<usize>> {
    (1..x.len())
        .map(|t| {
            let probs = normalize_log_weights(&discrete_log_weights(&x[t - 1], &x[t], params, cache))
                .map_err(|e| Error::numeric(format!("step {t}: {e}")))?;
            Ok(sample_categorical(&probs, rng))
        })
        .collect()
}

/// Refreshes every latent block of one trial with the parameters held fixed:
/// auxiliaries, then `x`, then `z`, then the auxiliaries for the new `z`.
pub fn latent_sweep<R: Rng + ?Sized>(
    trial: &Trial,
    latent: &mut LatentState,
    params: &ModelParams,
    cache: &LatentCache,
    rng: &mut R,
) -> Result<()> {
    refresh_auxiliaries(latent, params, rng);
    latent.x = ffbs_continuous(trial, latent, params, cache, rng)?;
    latent.z = sample_discrete(&latent.x, params, cache, rng)?;
    refresh_auxiliaries(latent, params, rng);
    Ok(())
}

pub fn refresh_auxiliaries<R: Rng + ?Sized>(latent: &mut LatentState, params: &ModelParams, rng: &mut R) {
    latent.omega = crate::conjugate::update_recurrence_pg(latent, &params.hyperplanes, &params.topology, rng);
    if params.emission.kind == ObservationKind::Bernoulli {
        latent.eta = crate::conjugate::update_emission_pg(latent, params, rng);
    } else {
        latent.eta.clear();
    }
}
