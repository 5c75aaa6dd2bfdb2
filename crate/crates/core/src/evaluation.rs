//! k-step forecasting and the MSE_k / R²_k metrics.
//!
//! A forecast from origin `o` uses only `y_{1:o}`. For each retained parameter
//! sample the latents are resampled with the parameters fixed, the posterior
//! mean of `x_o` is rolled forward through the noise-free leaf dynamics and
//! mapped through the emission mean. Predictions are averaged over samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::stream_rng;
use crate::init::{hard_assign, project_observations};
use crate::latent::{latent_sweep, LatentCache};
use crate::linalg::{psd_sqrt, std_normal_vec, Vector};
use crate::model::{LatentState, ModelParams, Trial};
use crate::parallel::map_indexed;
use crate::stick_breaking::{sample_leaf, tree_leaf_probs};

const FORECAST_BLOCK: u64 = 5;

/// How latents are propagated beyond the forecast origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Rollout {
    /// Most probable leaf and noise-free dynamics at every step.
    #[default]
    Deterministic,
    /// Average of simulated paths with sampled leaves and process noise.
    Stochastic { draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub k_max: usize,
    /// Latent sweeps discarded at the first origin.
    pub burn_in_sweeps: usize,
    /// Sweeps averaged into the origin estimate, at every origin.
    pub averaging_sweeps: usize,
    pub rollout: Rollout,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig { k_max: 30, burn_in_sweeps: 5, averaging_sweeps: 3, rollout: Rollout::Deterministic, seed: 0 }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.averaging_sweeps == 0 {
            return Err(Error::invalid("averaging_sweeps must be at least 1"));
        }
        if let Rollout::Stochastic { draws: 0 } = self.rollout {
            return Err(Error::invalid("stochastic rollout needs at least one draw"));
        }
        Ok(())
    }
}

/// Noise-free path `x, x_{+1}, …, x_{+k}` following the most probable leaf.
pub fn rollout_path(params: &ModelParams, x: &Vector, k: usize) -> Vec<Vector> {
    let mut path = Vec::with_capacity(k + 1);
    path.push(x.clone());
    for _ in 0..k {
        let prev = path.last().unwrap();
        let leaf = tree_leaf_probs(prev, &params.hyperplanes, &params.topology).argmax();
        path.push(params.leaf_dynamics(leaf).step(prev));
    }
    path
}

/// `x̂_{+k}` under the deterministic rollout.
pub fn rollout_mean(params: &ModelParams, x: &Vector, k: usize) -> Vector {
    rollout_path(params, x, k).pop().unwrap()
}

/// One simulated path of length `k + 1` with sampled leaves and noise.
pub fn rollout_sample<R: Rng + ?Sized>(params: &ModelParams, x: &Vector, k: usize, rng: &mut R) -> Vec<Vector> {
    let roots: Vec<_> = params.noise.iter().map(psd_sqrt).collect();
    let mut path = Vec::with_capacity(k + 1);
    path.push(x.clone());
    for _ in 0..k {
        let prev = path.last().unwrap();
        let leaf = sample_leaf(prev, &params.hyperplanes, &params.topology, rng);
        let next = params.leaf_dynamics(leaf).step(prev) + &roots[leaf] * std_normal_vec(params.d_x(), rng);
        path.push(next);
    }
    path
}

/// Predicted observation means `ŷ_{o}, …, ŷ_{o+k}` from the origin state.
fn predict_from(params: &ModelParams, x: &Vector, k: usize, rollout: Rollout, rng: &mut impl Rng) -> Vec<Vector> {
    match rollout {
        Rollout::Deterministic => rollout_path(params, x, k).iter().map(|s| params.emission.predict(s)).collect(),
        Rollout::Stochastic { draws } => {
            let mut acc = vec![Vector::zeros(params.d_y()); k + 1];
            for _ in 0..draws {
                for (a, s) in acc.iter_mut().zip(rollout_sample(params, x, k, rng)) {
                    *a += params.emission.predict(&s);
                }
            }
            acc.into_iter().map(|a| a / draws as f64).collect()
        }
    }
}

/// Latents for a trial not seen during fitting: projected observations and
/// the most probable leaves under the sample's gates.
pub fn initial_latents(params: &ModelParams, trial: &Trial, smoothing_width: f64) -> LatentState {
    let x = project_observations(&trial.y, &params.emission, smoothing_width);
    let z = hard_assign(&x, &params.hyperplanes, &params.topology);
    LatentState::new(x, z)
}

/// Posterior mean of `x_{0:T}` under fixed parameters, from `averaging`
/// latent sweeps after `burn_in` discarded ones.
pub fn smooth_latents<R: Rng + ?Sized>(
    params: &ModelParams,
    trial: &Trial,
    start: LatentState,
    burn_in: usize,
    averaging: usize,
    rng: &mut R,
) -> Result<Vec<Vector>> {
    if averaging == 0 {
        return Err(Error::invalid("averaging needs at least one sweep"));
    }
    let cache = LatentCache::new(params)?;
    let mut latent = start;
    for _ in 0..burn_in {
        latent_sweep(trial, &mut latent, params, &cache, rng)?;
    }
    let mut mean = vec![Vector::zeros(params.d_x()); trial.len() + 1];
    for _ in 0..averaging {
        latent_sweep(trial, &mut latent, params, &cache, rng)?;
        for (m, x) in mean.iter_mut().zip(&latent.x) {
            *m += x;
        }
    }
    Ok(mean.into_iter().map(|m| m / averaging as f64).collect())
}

/// Predictions for one trial. `yhat[k][j]` predicts `y_{o_j + k}` from the
/// origin `o_j = first_origin + j`, conditioned on `y_{1:o_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialForecast {
    pub id: u64,
    pub first_origin: usize,
    pub yhat: Vec<Vec<Vector>>,
}

impl TrialForecast {
    /// Observations `y_{o_j + k}` paired with their predictions.
    pub fn pairs<'a>(&'a self, trial: &'a Trial, k: usize) -> impl Iterator<Item = (&'a Vector, &'a Vector)> {
        self.yhat[k].iter().enumerate().map(move |(j, p)| (&trial.y[self.first_origin + j + k - 1], p))
    }
}

fn origin_estimates(
    params: &ModelParams,
    cache: &LatentCache,
    trial: &Trial,
    start: LatentState,
    first_origin: usize,
    config: &ForecastConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Vector>> {
    let mut latent = start;
    let mut estimates = Vec::with_capacity(trial.len() - first_origin + 1);
    for o in first_origin..=trial.len() {
        let prefix = Trial::new(trial.id, trial.y[..o].to_vec());
        if o > first_origin {
            let last = latent.x.last().unwrap().clone();
            let leaf = tree_leaf_probs(&last, &params.hyperplanes, &params.topology).argmax();
            latent.x.push(params.leaf_dynamics(leaf).step(&last));
            latent.z.push(leaf);
        } else {
            for _ in 0..config.burn_in_sweeps {
                latent_sweep(&prefix, &mut latent, params, cache, rng)?;
            }
        }
        let mut mean = Vector::zeros(params.d_x());
        for _ in 0..config.averaging_sweeps {
            latent_sweep(&prefix, &mut latent, params, cache, rng)?;
            mean += &latent.x[o];
        }
        estimates.push(mean / config.averaging_sweeps as f64);
    }
    Ok(estimates)
}

/// k-step forecasts for `k = 0..=k_max` from every origin
/// `o = first_origin, …, T`, averaged over the parameter samples. The final
/// origin only contributes the `k = 0` reconstruction.
///
/// `warm` optionally supplies latents for the first `first_origin`
/// observations of each trial (e.g. the fitted chain's final state); without
/// it each sample starts from [`initial_latents`].
pub fn k_step_forecast(
    samples: &[ModelParams],
    trials: &[Trial],
    warm: Option<&[LatentState]>,
    first_origin: usize,
    config: &ForecastConfig,
) -> Result<Vec<TrialForecast>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("forecasting needs at least one retained sample"));
    }
    if first_origin == 0 {
        return Err(Error::invalid("the first forecast origin must follow at least one observation"));
    }
    for t in trials {
        if config.k_max >= t.len() || first_origin + config.k_max > t.len() {
            return Err(Error::invalid(format!(
                "trial {}: k_max {} leaves no evaluable step after origin {} in {} observations",
                t.id,
                config.k_max,
                first_origin,
                t.len()
            )));
        }
    }
    if let Some(w) = warm {
        if w.len() != trials.len() || w.iter().any(|l| l.len() != first_origin) {
            return Err(Error::invalid("warm-start latents must cover the first origin of every trial"));
        }
    }
    let caches = samples.iter().map(LatentCache::new).collect::<Result<Vec<_>>>()?;
    let k_max = config.k_max;
    let results = map_indexed(trials, |i, trial| -> Result<TrialForecast> {
        let n_origins = trial.len() - first_origin;
        let mut sums: Vec<Vec<Vector>> =
            (0..=k_max).map(|k| vec![Vector::zeros(trial.y[0].len()); n_origins + 1 - k]).collect();
        for (s, (params, cache)) in samples.iter().zip(&caches).enumerate() {
            let mut rng = stream_rng(config.seed, s as u64, FORECAST_BLOCK, trial.id);
            let start = match warm {
                Some(w) => w[i].clone(),
                None => initial_latents(params, &Trial::new(trial.id, trial.y[..first_origin].to_vec()), 5.0),
            };
            let origins = origin_estimates(params, cache, trial, start, first_origin, config, &mut rng)?;
            for (j, x) in origins.iter().enumerate() {
                let horizon = k_max.min(n_origins - j);
                let preds = predict_from(params, x, horizon, config.rollout, &mut rng);
                for (k, p) in preds.into_iter().enumerate() {
                    sums[k][j] += p;
                }
            }
        }
        let n = samples.len() as f64;
        let yhat = sums.into_iter().map(|row| row.into_iter().map(|v| v / n).collect()).collect();
        Ok(TrialForecast { id: trial.id, first_origin, yhat })
    });
    results.into_iter().collect()
}

/// Accumulated squared errors for one trial and one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub sse: f64,
    /// `Σ ‖y_{t+k} − ȳ‖²` over the same terms.
    pub sst: f64,
    pub terms: usize,
}

impl Score {
    pub fn new<'a>(pairs: impl IntoIterator<Item = (&'a Vector, &'a Vector)>, y_bar: &Vector) -> Self {
        let mut s = Score { sse: 0.0, sst: 0.0, terms: 0 };
        for (y, p) in pairs {
            s.sse += (y - p).norm_squared();
            s.sst += (y - y_bar).norm_squared();
            s.terms += 1;
        }
        s
    }

    pub fn mse(&self) -> f64 {
        self.sse / self.terms as f64
    }

    /// `None` when the targets do not vary around the trial mean.
    pub fn r2(&self) -> Option<f64> {
        (self.sst > 0.0).then(|| 1.0 - self.sse / self.sst)
    }
}

pub fn trial_mean(y: &[Vector]) -> Vector {
    y.iter().fold(Vector::zeros(y[0].len()), |a, v| a + v) / y.len() as f64
}

/// MSE_k and R²_k of `yhat`, which predicts `y[k..]`, with `ȳ` the mean of
/// all of `y`. R²_k is `None` for a zero denominator.
pub fn mse_r2(y: &[Vector], yhat: &[Vector], k: usize) -> Result<(f64, Option<f64>)> {
    if y.is_empty() || k >= y.len() || yhat.len() != y.len() - k {
        return Err(Error::invalid("predictions must align with y[k..]"));
    }
    let s = Score::new(y[k..].iter().zip(yhat), &trial_mean(y));
    Ok((s.mse(), s.r2()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub id: u64,
    /// Indexed by `k - 1`.
    pub mse: Vec<f64>,
    pub r2: Vec<Option<f64>>,
}

/// Per-horizon metrics for `k = 1..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub model: String,
    pub seed: u64,
    pub k_max: usize,
    /// How trial-level R² values are combined into `r2`.
    pub r2_averaging: String,
    /// Squared error per term, pooled over trials.
    pub mse: Vec<f64>,
    /// Mean of the defined per-trial R²_k.
    pub r2: Vec<Option<f64>>,
    /// `1 − Σ sse / Σ sst` over all trials.
    pub r2_pooled: Vec<Option<f64>>,
    pub per_trial: Vec<TrialReport>,
}

impl ForecastReport {
    pub fn new(model: &str, seed: u64, trials: &[Trial], forecasts: &[TrialForecast]) -> Result<Self> {
        let k_max = forecasts.first().map_or(0, |f| f.yhat.len().saturating_sub(1));
        if forecasts.len() != trials.len() || forecasts.iter().any(|f| f.yhat.len() != k_max + 1) {
            return Err(Error::invalid("forecasts do not match the trials"));
        }
        let mut per_trial = Vec::with_capacity(trials.len());
        let mut scores = vec![Vec::with_capacity(trials.len()); k_max];
        for (trial, f) in trials.iter().zip(forecasts) {
            if trial.id != f.id {
                return Err(Error::invalid(format!("forecast for trial {} is out of order", f.id)));
            }
            let y_bar = trial_mean(&trial.y);
            let row: Vec<Score> = (1..=k_max).map(|k| Score::new(f.pairs(trial, k), &y_bar)).collect();
            per_trial.push(TrialReport {
                id: trial.id,
                mse: row.iter().map(Score::mse).collect(),
                r2: row.iter().map(Score::r2).collect(),
            });
            for (k, s) in row.into_iter().enumerate() {
                scores[k].push(s);
            }
        }
        let mut report = ForecastReport {
            model: model.to_string(),
            seed,
            k_max,
            r2_averaging: "mean of per-trial R2; trials with constant targets are skipped".to_string(),
            mse: Vec::with_capacity(k_max),
            r2: Vec::with_capacity(k_max),
            r2_pooled: Vec::with_capacity(k_max),
            per_trial,
        };
        for row in &scores {
            let sse: f64 = row.iter().map(|s| s.sse).sum();
            let sst: f64 = row.iter().map(|s| s.sst).sum();
            let terms: usize = row.iter().map(|s| s.terms).sum();
            let defined: Vec<f64> = row.iter().filter_map(Score::r2).collect();
            report.mse.push(sse / terms as f64);
            report.r2.push((!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64));
            report.r2_pooled.push((sst > 0.0).then(|| 1.0 - sse / sst));
        }
        Ok(report)
    }

    /// Mean of `r2` over all horizons, `None` if any horizon is undefined.
    pub fn mean_r2(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.r2.iter().copied().collect();
        v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Table with columns `k,mse,r2,model,seed`.
    pub fn to_csv(&self) -> String {
        let model = if self.model.contains([',', '"', '\n']) {
            format!("\"{}\"", self.model.replace('"', "\"\""))
        } else {
            self.model.clone()
        };
        let mut out = String::from("k,mse,r2,model,seed\n");
        for k in 0..self.k_max {
            let r2 = self.r2[k].map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{},{},{},{},{}\n", k + 1, self.mse[k], r2, model, self.seed));
        }
        out
    }
}
