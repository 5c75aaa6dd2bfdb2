//! Browser demo: fit a small model sweep by sweep, look at its dynamics at
//! each depth of the tree, roll trajectories out from any point, and inspect
//! the Pólya-Gamma sampler.
//!
//! [`Session`] and [`pg_histogram`] are plain Rust so they can be tested
//! natively; the `wasm_bindgen` wrappers only convert types.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trslds::evaluation::rollout_path;
use trslds::gibbs::{Chain, GibbsConfig};
use trslds::init::{initialize, InitConfig};
use trslds::linalg::{Mat, Vector};
use trslds::model::{EmissionParams, ObservationKind, PriorConfig};
use trslds::multiscale::{depth_assignment, depth_drift};
use trslds::polya_gamma::{pg_mean, pg_var, sample_pg};
use trslds::synthetic::{self, FhnSpec, NascarGates, NascarSpec};
use trslds::TreeTopology;
use wasm_bindgen::prelude::*;

/// A dataset together with a running Gibbs chain.
pub struct Session {
    chain: Chain,
}

impl Session {
    /// `system` is `"nascar"`, `"nascar-tree"` or `"fhn"`.
    pub fn new(system: &str, num_leaves: usize, seed: u64) -> trslds::Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = match system {
            "nascar" | "nascar-tree" => {
                let gates = if system == "nascar" { NascarGates::Sequential } else { NascarGates::Tree };
                let spec = NascarSpec { points: 600, gates, ..NascarSpec::default() };
                synthetic::simulate_nascar(&spec, &mut rng)?.x
            }
            "fhn" => {
                let spec = FhnSpec { trajectories: 6, points: 300, ..FhnSpec::default() };
                synthetic::simulate_fhn(&spec, &mut rng)?.x
            }
            other => return Err(trslds::Error::invalid(format!("unknown system {other}"))),
        };
        let d_y = 4;
        let c = synthetic::random_orthonormal(d_y, 2, &mut rng);
        let emission = EmissionParams::gaussian(c, Vector::zeros(d_y), Mat::identity(d_y, d_y) * 1e-3);
        let trials = synthetic::observe(&paths, &emission, &mut rng)?;

        let topology = TreeTopology::build(num_leaves)?;
        let priors = PriorConfig::default().build(2, d_y)?;
        let init = initialize(&trials, ObservationKind::Gaussian, &topology, 2, &priors, &InitConfig::default())?;
        let config = GibbsConfig { num_iterations: usize::MAX, burn_in: usize::MAX - 1, seed, ..GibbsConfig::default() };
        Ok(Session { chain: Chain::new(config, trials, init)? })
    }

    /// Runs `n` sweeps and returns the log-joint after each.
    pub fn sweep(&mut self, n: usize) -> trslds::Result<Vec<f64>> {
        let start = self.chain.record().log_joint.len();
        for _ in 0..n {
            self.chain.step()?;
        }
        Ok(self.chain.record().log_joint[start..].to_vec())
    }

    pub fn iterations(&self) -> usize {
        self.chain.iteration()
    }

    pub fn max_depth(&self) -> usize {
        self.chain.state().params.topology.max_depth()
    }

    /// `[xmin, xmax, ymin, ymax]` of the current latents, padded by 10%.
    pub fn bounds(&self) -> Vec<f64> {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for x in self.chain.state().latents.iter().flat_map(|l| &l.x) {
            for i in 0..2 {
                lo[i] = lo[i].min(x[i]);
                hi[i] = hi[i].max(x[i]);
            }
        }
        let pad = |i: usize| 0.1 * (hi[i] - lo[i]).max(1e-3);
        vec![lo[0] - pad(0), hi[0] + pad(0), lo[1] - pad(1), hi[1] + pad(1)]
    }

    /// Latent paths as `(trial, x1, x2, leaf)` quadruples; the first state of
    /// each trial has leaf `-1`.
    pub fn latents(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, l) in self.chain.state().latents.iter().enumerate() {
            for (t, x) in l.x.iter().enumerate() {
                let z = if t == 0 { -1.0 } else { l.z[t - 1] as f64 };
                out.extend([i as f64, x[0], x[1], z]);
            }
        }
        out
    }

    /// Depth-`depth` field on an `nx × ny` grid over `bounds`, as
    /// `(x1, x2, dx1, dx2, node)` rows with `x1` varying fastest.
    pub fn field(&self, depth: usize, nx: usize, ny: usize, bounds: &[f64]) -> trslds::Result<Vec<f64>> {
        let params = &self.chain.state().params;
        if depth > self.max_depth() {
            return Err(trslds::Error::invalid("depth exceeds the tree"));
        }
        if bounds.len() != 4 || nx < 2 || ny < 2 {
            return Err(trslds::Error::invalid("need four bounds and at least 2×2 points"));
        }
        let mut out = Vec::with_capacity(nx * ny * 5);
        for j in 0..ny {
            for i in 0..nx {
                let x = Vector::from_column_slice(&[
                    bounds[0] + (bounds[1] - bounds[0]) * i as f64 / (nx - 1) as f64,
                    bounds[2] + (bounds[3] - bounds[2]) * j as f64 / (ny - 1) as f64,
                ]);
                let d = depth_drift(params, &x, depth);
                let node = depth_assignment(params, &x, depth);
                out.extend([x[0], x[1], d[0], d[1], node.index() as f64]);
            }
        }
        Ok(out)
    }

    /// Deterministic rollout of `steps` steps from `(x1, x2)`, flattened.
    pub fn rollout(&self, x1: f64, x2: f64, steps: usize) -> Vec<f64> {
        let x = Vector::from_column_slice(&[x1, x2]);
        rollout_path(&self.chain.state().params, &x, steps).iter().flat_map(|p| [p[0], p[1]]).collect()
    }
}

/// Histogram of `n` draws from PG(b, c) over `[0, hi]`; returns
/// `[mean, var, analytic mean, analytic var, hi, counts...]`.
pub fn pg_histogram(b: u32, c: f64, n: usize, bins: usize, seed: u64) -> trslds::Result<Vec<f64>> {
    if n == 0 || bins == 0 {
        return Err(trslds::Error::invalid("need at least one draw and one bin"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = (0..n).map(|_| sample_pg(b, c, &mut rng)).collect::<trslds::Result<Vec<f64>>>()?;
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    let (m, v) = (pg_mean(b as f64, c), pg_var(b as f64, c));
    let hi = m + 5.0 * v.sqrt();
    let mut counts = vec![0.0; bins];
    for d in draws {
        if d < hi {
            counts[(d / hi * bins as f64) as usize] += 1.0;
        }
    }
    let mut out = vec![mean, var, m, v, hi];
    out.extend(counts);
    Ok(out)
}

fn js_err(e: trslds::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(system: &str, num_leaves: usize, seed: u64) -> Result<Demo, JsError> {
        Session::new(system, num_leaves, seed).map(|inner| Demo { inner }).map_err(js_err)
    }

    pub fn sweep(&mut self, n: usize) -> Result<Vec<f64>, JsError> {
        self.inner.sweep(n).map_err(js_err)
    }

    pub fn iterations(&self) -> usize {
        self.inner.iterations()
    }

    #[wasm_bindgen(js_name = maxDepth)]
    pub fn max_depth(&self) -> usize {
        self.inner.max_depth()
    }

    pub fn bounds(&self) -> Vec<f64> {
        self.inner.bounds()
    }

    pub fn latents(&self) -> Vec<f64> {
        self.inner.latents()
    }

    pub fn field(&self, depth: usize, nx: usize, ny: usize, bounds: Vec<f64>) -> Result<Vec<f64>, JsError> {
        self.inner.field(depth, nx, ny, &bounds).map_err(js_err)
    }

    pub fn rollout(&self, x1: f64, x2: f64, steps: usize) -> Vec<f64> {
        self.inner.rollout(x1, x2, steps)
    }
}

#[wasm_bindgen(js_name = pgHistogram)]
pub fn pg_histogram_js(b: u32, c: f64, n: usize, bins: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    pg_histogram(b, c, n, bins, seed).map_err(js_err)
}
