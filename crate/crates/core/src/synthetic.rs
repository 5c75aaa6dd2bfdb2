//! Ground-truth systems for experiments: FitzHugh-Nagumo, Lorenz, two NASCAR
//! style switching systems and random linear systems, plus observation layers.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, std_normal_mat, std_normal_vec, Mat, Vector};
use crate::model::{
    observe_state, EmissionParams, ModelParams, NodeDynamics, PriorConfig, Trial,
};
use crate::stick_breaking::{sample_leaf, Hyperplane, HyperplaneSet};
use crate::tree::TreeTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

/// Fixed-step integration; returns `points` states starting with `x0`.
pub fn integrate(f: impl Fn(&Vector) -> Vector, x0: &Vector, dt: f64, points: usize, integrator: Integrator) -> Vec<Vector> {
    let mut out = Vec::with_capacity(points);
    if points == 0 {
        return out;
    }
    out.push(x0.clone());
    for _ in 1..points {
        let x = out.last().expect("non-empty");
        let next = match integrator {
            Integrator::Euler => x + f(x) * dt,
            Integrator::Rk4 => {
                let k1 = f(x);
                let k2 = f(&(x + &k1 * (dt / 2.0)));
                let k3 = f(&(x + &k2 * (dt / 2.0)));
                let k4 = f(&(x + &k3 * dt));
                x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        };
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhnParams {
    pub a: f64,
    pub b: f64,
    pub tau: f64,
}

impl Default for FhnParams {
    fn default() -> Self {
        FhnParams { a: 0.7, b: 0.8, tau: 12.5 }
    }
}

/// `(v̇, ẇ)` with `v̇ = v − v³/3 − w + I`, `τ ẇ = v + a − b w`.
pub fn fhn_rhs(x: &Vector, p: &FhnParams, i_ext: f64) -> Vector {
    let (v, w) = (x[0], x[1]);
    Vector::from_column_slice(&[v - v.powi(3) / 3.0 - w + i_ext, (v + p.a - p.b * w) / p.tau])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FhnSpec {
    pub trajectories: usize,
    pub points: usize,
    pub dt: f64,
    pub integrator: Integrator,
    pub params: FhnParams,
    pub i_ext_mean: f64,
    /// Variance of the per-trajectory input current.
    pub i_ext_var: f64,
    /// Starts are uniform on `[−r, r]²`.
    pub start_range: f64,
}

impl Default for FhnSpec {
    fn default() -> Self {
        FhnSpec {
            trajectories: 100,
            points: 430,
            dt: 0.1,
            integrator: Integrator::Rk4,
            params: FhnParams::default(),
            i_ext_mean: 0.7,
            i_ext_var: 0.04,
            start_range: 3.0,
        }
    }
}

fn check_grid(trajectories: usize, points: usize, dt: f64) -> Result<()> {
    if trajectories == 0 || points < 2 {
        return Err(Error::invalid("need at least one trajectory of two or more points"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("integration step must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhnData {
    pub x: Vec<Vec<Vector>>,
    /// Input current of each trajectory.
    pub i_ext: Vec<f64>,
}

pub fn simulate_fhn<R: Rng + ?Sized>(spec: &FhnSpec, rng: &mut R) -> Result<FhnData> {
    check_grid(spec.trajectories, spec.points, spec.dt)?;
    if !(spec.i_ext_var >= 0.0) {
        return Err(Error::invalid("input current variance must be non-negative"));
    }
    let current = Normal::new(spec.i_ext_mean, spec.i_ext_var.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut x = Vec::with_capacity(spec.trajectories);
    let mut i_ext = Vec::with_capacity(spec.trajectories);
    for _ in 0..spec.trajectories {
        let r = spec.start_range;
        let x0 = Vector::from_fn(2, |_, _| rng.random::<f64>() * 2.0 * r - r);
        let i = current.sample(rng);
        x.push(integrate(|s| fhn_rhs(s, &spec.params, i), &x0, spec.dt, spec.points, spec.integrator));
        i_ext.push(i);
    }
    Ok(FhnData { x, i_ext })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        LorenzParams { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }
}

pub fn lorenz_rhs(x: &Vector, p: &LorenzParams) -> Vector {
    Vector::from_column_slice(&[
        p.sigma * (x[1] - x[0]),
        x[0] * (p.rho - x[2]) - x[1],
        x[0] * x[1] - p.beta * x[2],
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzSpec {
    pub trajectories: usize,
    pub points: usize,
    pub dt: f64,
    pub integrator: Integrator,
    pub params: LorenzParams,
    /// Starts are uniform on `[−r, r]² × [z_lo, z_hi]`.
    pub start_range: f64,
    pub start_z: (f64, f64),
}

impl Default for LorenzSpec {
    fn default() -> Self {
        LorenzSpec {
            trajectories: 50,
            points: 230,
            dt: 0.01,
            integrator: Integrator::Rk4,
            params: LorenzParams::default(),
            start_range: 15.0,
            start_z: (10.0, 40.0),
        }
    }
}

pub fn simulate_lorenz<R: Rng + ?Sized>(spec: &LorenzSpec, rng: &mut R) -> Result<Vec<Vec<Vector>>> {
    check_grid(spec.trajectories, spec.points, spec.dt)?;
    let (lo, hi) = spec.start_z;
    Ok((0..spec.trajectories)
        .map(|_| {
            let r = spec.start_range;
            let x0 = Vector::from_column_slice(&[
                rng.random::<f64>() * 2.0 * r - r,
                rng.random::<f64>() * 2.0 * r - r,
                lo + rng.random::<f64>() * (hi - lo),
            ]);
            integrate(|s| lorenz_rhs(s, &spec.params), &x0, spec.dt, spec.points, spec.integrator)
        })
        .collect())
}

/// Random `rows × cols` matrix with orthonormal columns.
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let g = std_normal_mat(rows, cols, rng);
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column signs so the result is Haar distributed.
    Mat::from_fn(rows, cols, |i, j| q[(i, j)] * r[(j, j)].signum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NascarGates {
    /// Sequential stick-breaking over the two turns and the straights.
    #[default]
    Sequential,
    /// Balanced tree whose leaves are the four quadrants.
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NascarSpec {
    pub trajectories: usize,
    pub points: usize,
    pub gates: NascarGates,
    /// Distance travelled per step on a straight.
    pub speed: f64,
    /// Rotation per step in a turn, in radians.
    pub turn_angle: f64,
    /// Standard deviation of the isotropic state noise.
    pub noise_sd: f64,
    /// Slope of the gating logits; large values give near-deterministic regimes.
    pub gate_sharpness: f64,
}

impl Default for NascarSpec {
    fn default() -> Self {
        NascarSpec {
            trajectories: 1,
            points: 1000,
            gates: NascarGates::Sequential,
            speed: 0.1,
            turn_angle: std::f64::consts::PI / 20.0,
            noise_sd: 0.01,
            gate_sharpness: 100.0,
        }
    }
}

fn rotation(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Affine map `x ↦ centre + ρ R(θ)(x − centre)` as node dynamics.
fn rotation_about(centre: &Vector, theta: f64, rho: f64) -> NodeDynamics {
    let m = rotation(theta) * rho;
    let id = Mat::identity(2, 2);
    NodeDynamics::new(&m - &id, (id - m) * centre)
}

fn v2(a: f64, b: f64) -> Vector {
    Vector::from_column_slice(&[a, b])
}

/// Ground-truth switching model of the NASCAR track.
///
/// The sequential track is a stadium: half-turns about `(±1, 0)` joined by
/// straights at `y = ±1`, travelled counter-clockwise. The tree track rotates
/// about the origin with a different speed and radial factor in each
/// quadrant; the radial factors cancel over a lap.
pub fn nascar_model(spec: &NascarSpec) -> Result<ModelParams> {
    if !(spec.noise_sd >= 0.0 && spec.speed > 0.0 && spec.turn_angle > 0.0 && spec.gate_sharpness > 0.0) {
        return Err(Error::invalid("NASCAR speed, angle and sharpness must be positive"));
    }
    let s = spec.gate_sharpness;
    let (topology, leaves, planes): (TreeTopology, Vec<NodeDynamics>, Vec<Hyperplane>) = match spec.gates {
        NascarGates::Sequential => {
            let t = TreeTopology::sequential(4)?;
            let leaves = vec![
                rotation_about(&v2(1.0, 0.0), spec.turn_angle, 1.0),
                rotation_about(&v2(-1.0, 0.0), spec.turn_angle, 1.0),
                NodeDynamics::new(Mat::zeros(2, 2), v2(-spec.speed, 0.0)),
                NodeDynamics::new(Mat::zeros(2, 2), v2(spec.speed, 0.0)),
            ];
            let planes = vec![
                Hyperplane::new(v2(s, 0.0), -s),
                Hyperplane::new(v2(-s, 0.0), -s),
                Hyperplane::new(v2(0.0, s), 0.0),
            ];
            (t, leaves, planes)
        }
        NascarGates::Tree => {
            let t = TreeTopology::build(4)?;
            let (fast, slow) = (spec.turn_angle * 1.5, spec.turn_angle * 0.75);
            // Quadrant order: (x>0, y>0), (x>0, y<0), (x<0, y>0), (x<0, y<0).
            // Slow quadrants take twice the steps, so `grow · shrink² = 1` closes the lap.
            let (grow, shrink) = (1.01, 1.01f64.powf(-0.5));
            let o = v2(0.0, 0.0);
            let leaves = vec![
                rotation_about(&o, fast, grow),
                rotation_about(&o, slow, shrink),
                rotation_about(&o, slow, shrink),
                rotation_about(&o, fast, grow),
            ];
            let planes = vec![
                Hyperplane::new(v2(s, 0.0), 0.0),
                Hyperplane::new(v2(0.0, s), 0.0),
                Hyperplane::new(v2(0.0, s), 0.0),
            ];
            (t, leaves, planes)
        }
    };
    let mut dynamics = vec![NodeDynamics::zeros(2); topology.num_nodes()];
    for (k, d) in leaves.into_iter().enumerate() {
        dynamics[topology.leaf(k).0] = d;
    }
    let mut hyperplanes = HyperplaneSet::zeros(&topology, 2);
    for (&n, h) in topology.internal_nodes().iter().zip(planes) {
        hyperplanes.set(n, h);
    }
    let var = spec.noise_sd * spec.noise_sd;
    let priors = PriorConfig::default().build(2, 2)?;
    let params = ModelParams {
        noise: vec![Mat::identity(2, 2) * var; 4],
        emission: EmissionParams::gaussian(Mat::identity(2, 2), Vector::zeros(2), Mat::zeros(2, 2)),
        topology,
        dynamics,
        hyperplanes,
        priors,
    };
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingData {
    pub x: Vec<Vec<Vector>>,
    /// `z[i][t]` is the regime that produced `x[i][t+1]`.
    pub z: Vec<Vec<usize>>,
}

/// Runs a switching model from the given starts (states only; no emissions).
pub fn simulate_switching<R: Rng + ?Sized>(
    params: &ModelParams,
    starts: &[Vector],
    points: usize,
    rng: &mut R,
) -> Result<SwitchingData> {
    if points < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    let roots: Vec<Mat> = params.noise.iter().map(psd_sqrt).collect();
    let mut data = SwitchingData { x: Vec::new(), z: Vec::new() };
    for x0 in starts {
        let mut x = vec![x0.clone()];
        let mut z = Vec::with_capacity(points - 1);
        for _ in 1..points {
            let prev = x.last().expect("non-empty");
            let k = sample_leaf(prev, &params.hyperplanes, &params.topology, rng);
            let next = params.leaf_dynamics(k).step(prev) + &roots[k] * std_normal_vec(params.d_x(), rng);
            z.push(k);
            x.push(next);
        }
        data.x.push(x);
        data.z.push(z);
    }
    Ok(data)
}

pub fn simulate_nascar<R: Rng + ?Sized>(spec: &NascarSpec, rng: &mut R) -> Result<SwitchingData> {
    let params = nascar_model(spec)?;
    let start = match spec.gates {
        NascarGates::Sequential => v2(0.0, -1.0),
        NascarGates::Tree => v2(1.0, 0.0),
    };
    let starts: Vec<Vector> =
        (0..spec.trajectories).map(|_| &start + std_normal_vec(2, rng) * spec.noise_sd).collect();
    simulate_switching(&params, &starts, spec.points, rng)
}

/// Two-regime rotation observed through a logistic layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BernoulliSpec {
    pub trajectories: usize,
    pub points: usize,
    pub d_y: usize,
    /// Rotation per step; the right half-plane turns at 1.5×, the left at 0.75×.
    pub turn_angle: f64,
    pub noise_sd: f64,
    /// Standard deviation of the random emission biases.
    pub bias_sd: f64,
}

impl Default for BernoulliSpec {
    fn default() -> Self {
        BernoulliSpec {
            trajectories: 50,
            points: 100,
            d_y: 40,
            turn_angle: std::f64::consts::PI / 20.0,
            noise_sd: 0.01,
            bias_sd: 0.5,
        }
    }
}

/// Ground truth for [`BernoulliSpec`]: a two-leaf model split at `x₁ = 0`
/// whose radial factors cancel over a lap, with `C` and `d` drawn at random.
pub fn bernoulli_model<R: Rng + ?Sized>(spec: &BernoulliSpec, rng: &mut R) -> Result<ModelParams> {
    if spec.d_y == 0 || !(spec.turn_angle > 0.0 && spec.noise_sd >= 0.0 && spec.bias_sd >= 0.0) {
        return Err(Error::invalid("invalid Bernoulli fixture specification"));
    }
    let topology = TreeTopology::build(2)?;
    let o = v2(0.0, 0.0);
    let mut dynamics = vec![NodeDynamics::zeros(2); topology.num_nodes()];
    dynamics[topology.leaf(0).0] = rotation_about(&o, spec.turn_angle * 1.5, 1.02);
    dynamics[topology.leaf(1).0] = rotation_about(&o, spec.turn_angle * 0.75, 1.02f64.powf(-0.5));
    let mut hyperplanes = HyperplaneSet::zeros(&topology, 2);
    hyperplanes.set(crate::tree::NodeId::ROOT, Hyperplane::new(v2(100.0, 0.0), 0.0));
    let c = std_normal_mat(spec.d_y, 2, rng);
    let d = std_normal_vec(spec.d_y, rng) * spec.bias_sd;
    Ok(ModelParams {
        noise: vec![Mat::identity(2, 2) * spec.noise_sd * spec.noise_sd; 2],
        emission: EmissionParams::bernoulli(c, d),
        priors: PriorConfig::default().build(2, spec.d_y)?,
        topology,
        dynamics,
        hyperplanes,
    })
}

/// States start on random radii in `[0.5, 1.5]` at uniform angles.
pub fn simulate_bernoulli<R: Rng + ?Sized>(spec: &BernoulliSpec, rng: &mut R) -> Result<(ModelParams, SwitchingData, Vec<Trial>)> {
    let params = bernoulli_model(spec, rng)?;
    let starts: Vec<Vector> = (0..spec.trajectories)
        .map(|_| {
            let r = 0.5 + rng.random::<f64>();
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            v2(r * a.cos(), r * a.sin())
        })
        .collect();
    let data = simulate_switching(&params, &starts, spec.points, rng)?;
    let trials = observe(&data.x, &params.emission, rng)?;
    Ok((params, data, trials))
}

/// A random stable linear system as a one-leaf model with Gaussian emissions.
pub fn lds_model<R: Rng + ?Sized>(d_x: usize, d_y: usize, rng: &mut R) -> Result<ModelParams> {
    if d_x == 0 || d_y == 0 {
        return Err(Error::invalid("dimensions must be positive"));
    }
    let topology = TreeTopology::build(1)?;
    // Slow rotation composed with contraction, in a random basis.
    let basis = random_orthonormal(d_x, d_x, rng);
    let mut core = Mat::identity(d_x, d_x) * 0.99;
    for i in (0..d_x.saturating_sub(1)).step_by(2) {
        let r = rotation(0.1 + 0.2 * rng.random::<f64>()) * 0.99;
        core.view_mut((i, i), (2, 2)).copy_from(&r);
    }
    let f = &basis * core * basis.transpose();
    let a = f - Mat::identity(d_x, d_x);
    let b = std_normal_vec(d_x, rng) * 0.05;
    let c = std_normal_mat(d_y, d_x, rng);
    let d = std_normal_vec(d_y, rng);
    let priors = PriorConfig::default().build(d_x, d_y)?;
    Ok(ModelParams {
        dynamics: vec![NodeDynamics::new(a, b)],
        noise: vec![Mat::identity(d_x, d_x) * 1e-3],
        hyperplanes: HyperplaneSet::zeros(&topology, d_x),
        emission: EmissionParams::gaussian(c, d, Mat::identity(d_y, d_y) * 1e-3),
        topology,
        priors,
    })
}

/// Observes every state of every trajectory; trial ids follow the input order.
pub fn observe<R: Rng + ?Sized>(trajectories: &[Vec<Vector>], emission: &EmissionParams, rng: &mut R) -> Result<Vec<Trial>> {
    emission.validate()?;
    let s_root = emission.s.as_ref().map(psd_sqrt);
    trajectories
        .iter()
        .enumerate()
        .map(|(i, xs)| {
            if xs.iter().any(|x| x.len() != emission.d_x()) {
                return Err(Error::invalid(format!("trajectory {i} has the wrong state dimension")));
            }
            let y = xs.iter().map(|x| observe_state(emission, s_root.as_ref(), x, rng)).collect();
            Ok(Trial::new(i as u64, y))
        })
        .collect()
}

/// FHN observation layer: `C = diag(2, −2)`, `d = (0.5, 0.5)`, `S = 0.01 I`.
pub fn fhn_emission() -> EmissionParams {
    EmissionParams::gaussian(
        Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -2.0]),
        Vector::from_column_slice(&[0.5, 0.5]),
        Mat::identity(2, 2) * 0.01,
    )
}

/// Ten-dimensional projection of the Lorenz state with random orthonormal columns.
pub fn lorenz_emission<R: Rng + ?Sized>(d_y: usize, noise_var: f64, rng: &mut R) -> EmissionParams {
    EmissionParams::gaussian(random_orthonormal(d_y, 3, rng), Vector::zeros(d_y), Mat::identity(d_y, d_y) * noise_var)
}

/// Splits each trial into its first `T − t_test` and last `t_test` observations.
pub fn split_train_test(trials: &[Trial], t_test: usize) -> Result<(Vec<Trial>, Vec<Trial>)> {
    let mut train = Vec::with_capacity(trials.len());
    let mut test = Vec::with_capacity(trials.len());
    for t in trials {
        if t_test >= t.len() {
            return Err(Error::invalid(format!("trial {} has {} points; cannot hold out {t_test}", t.id, t.len())));
        }
        let cut = t.len() - t_test;
        train.push(Trial::new(t.id, t.y[..cut].to_vec()));
        test.push(Trial::new(t.id, t.y[cut..].to_vec()));
    }
    Ok((train, test))
}

/// Stable fixed point of FitzHugh-Nagumo for input `i_ext`, by Newton's method.
pub fn fhn_fixed_point(p: &FhnParams, i_ext: f64) -> Vector {
    // w = (v + a)/b, so v − v³/3 − (v + a)/b + I = 0.
    let mut v: f64 = -1.0;
    for _ in 0..100 {
        let g = v - v.powi(3) / 3.0 - (v + p.a) / p.b + i_ext;
        let dg = 1.0 - v * v - 1.0 / p.b;
        let step = g / dg;
        v -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    Vector::from_column_slice(&[v, (v + p.a) / p.b])
}
