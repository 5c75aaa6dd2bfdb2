//! Blocked Gibbs sampler over latents and parameters, chain bookkeeping,
//! checkpoints and the Geweke joint-distribution test.
//!
//! One sweep visits, in order: the Pólya-gamma auxiliaries, the continuous
//! states, the discrete states (per trial), leaf dynamics and noise, internal
//! node dynamics from the leaves upwards, hyperplanes, emissions and finally
//! the optional rotation normalisation.
//!
//! Random numbers come from ChaCha8 streams keyed by `(seed, iteration, block)`
//! and, for the latent blocks, by trial id. Results therefore do not depend on
//! the thread count or on the order in which trials are supplied.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{
    emission_stats, leaf_stats, update_emission_bernoulli, update_emission_gaussian, update_hyperplane,
    update_internal_dynamics, update_leaf_dynamics, update_leaf_noise,
};
use crate::error::{Error, Result};
use crate::identifiability::{normalize_rotation, NormalizeOutcome};
use crate::latent::{latent_sweep, LatentCache};
use crate::linalg::{sample_gaussian, Vector};
use crate::model::{
    log_joint, sample_prior_params, simulate, LatentState, ModelParams, ObservationKind, PriorConfig, PriorKind,
    Trial,
};
use crate::parallel::map_indexed;
use crate::stick_breaking::Hyperplane;
use crate::tree::{NodeId, TreeTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub num_iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub fix_emissions: bool,
    pub fix_hyperplanes: bool,
    /// Iterations between rotation normalisations; `0` disables them.
    pub normalize_every: usize,
    /// Flips the sign of `κ` in the hyperplane update. Only for sampler self-tests.
    #[doc(hidden)]
    #[serde(skip)]
    pub flip_recurrence_kappa: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            num_iterations: 1000,
            burn_in: 950,
            thinning: 1,
            seed: 0,
            fix_emissions: false,
            fix_hyperplanes: false,
            normalize_every: 1,
            flip_recurrence_kappa: false,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_iterations == 0 {
            return Err(Error::invalid("gibbs.num_iterations must be positive"));
        }
        if self.thinning == 0 {
            return Err(Error::invalid("gibbs.thinning must be positive"));
        }
        if self.burn_in >= self.num_iterations {
            return Err(Error::invalid(format!(
                "gibbs.burn_in ({}) must be smaller than gibbs.num_iterations ({})",
                self.burn_in, self.num_iterations
            )));
        }
        Ok(())
    }

    /// Whether the draw after sweep `iteration` (0-based) is retained.
    pub fn retains(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thinning)
    }

    fn kappa_sign(&self) -> f64 {
        if self.flip_recurrence_kappa {
            -1.0
        } else {
            1.0
        }
    }
}

const LATENT_BLOCK: u64 = 0;
const PARAM_BLOCK: u64 = 1;

/// Independent generator for `(seed, iteration, block, stream)`.
pub(crate) fn stream_rng(seed: u64, iteration: u64, block: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&iteration.to_le_bytes());
    key[16..24].copy_from_slice(&block.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Parameters together with the latents of every trial, aligned by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub params: ModelParams,
    pub latents: Vec<LatentState>,
}

/// One full sweep. `trials` and `state.latents` must be aligned.
pub fn gibbs_sweep(
    state: &mut ChainState,
    trials: &[Trial],
    config: &GibbsConfig,
    iteration: usize,
) -> Result<Option<NormalizeOutcome>> {
    sweep_blocks(state, trials, config, iteration).map_err(|e| e.at_iteration(iteration))
}

fn sweep_blocks(
    state: &mut ChainState,
    trials: &[Trial],
    config: &GibbsConfig,
    iteration: usize,
) -> Result<Option<NormalizeOutcome>> {
    if trials.len() != state.latents.len() {
        return Err(Error::invalid("latents and trials are not aligned"));
    }
    let it = iteration as u64;
    let params = &state.params;
    let cache = LatentCache::new(params)?;
    let pairs: Vec<(&Trial, &LatentState)> = trials.iter().zip(&state.latents).collect();
    let updated = map_indexed(&pairs, |_, (trial, lat)| {
        let mut rng = stream_rng(config.seed, it, LATENT_BLOCK, trial.id);
        let mut lat = (*lat).clone();
        latent_sweep(trial, &mut lat, params, &cache, &mut rng)?;
        Ok(lat)
    });
    state.latents = updated.into_iter().collect::<Result<Vec<_>>>()?;

    let mut rng = stream_rng(config.seed, it, PARAM_BLOCK, 0);
    update_dynamics(state, &mut rng)?;
    if !config.fix_hyperplanes {
        update_hyperplanes(state, config.kappa_sign(), &mut rng)?;
    }
    if !config.fix_emissions {
        update_emissions(state, trials, &mut rng)?;
    }
    let outcome = (config.normalize_every > 0 && (iteration + 1).is_multiple_of(config.normalize_every))
        .then(|| normalize_rotation(&mut state.params, &mut state.latents));
    Ok(outcome)
}

fn update_dynamics(state: &mut ChainState, rng: &mut ChaCha8Rng) -> Result<()> {
    let params = &mut state.params;
    let dim = params.d_x();
    let zero = Vector::zeros(dim * (dim + 1));
    let hierarchy = params.priors.hierarchy.clone();
    let topology = params.topology.clone();
    for k in 0..topology.num_leaves() {
        let node = topology.leaf(k);
        let stats = leaf_stats(k, &state.latents, dim);
        let (mean, cov) = match hierarchy.conditional_parent(node, &topology, &params.dynamics) {
            Some((parent, cov)) => (parent.map_or_else(|| zero.clone(), |p| p.to_vec()), cov),
            None => return Err(Error::invalid("leaf without a dynamics prior")),
        };
        params.dynamics[node.0] = update_leaf_dynamics(&mean, &cov, &stats, &params.noise[k], rng)?;
        params.noise[k] = update_leaf_noise(&params.dynamics[node.0], &stats, &params.priors.noise, rng)?;
    }
    if hierarchy.kind == PriorKind::Tree {
        for n in internal_leaf_to_root(&topology) {
            let parent_mean = topology.parent(n).map_or_else(|| zero.clone(), |p| params.dynamics[p.0].to_vec());
            let own_cov = hierarchy.node_cov(topology.depth(n));
            let (l, r) = topology.children(n).expect("internal node has children");
            let children: Vec<_> = [l, r]
                .iter()
                .map(|c| (params.dynamics[c.0].to_vec(), hierarchy.node_cov(topology.depth(*c))))
                .collect();
            params.dynamics[n.0] = update_internal_dynamics(&parent_mean, &own_cov, &children, dim, rng)?;
        }
    }
    Ok(())
}

/// Internal nodes ordered deepest first.
fn internal_leaf_to_root(topology: &TreeTopology) -> Vec<NodeId> {
    let mut nodes = topology.internal_nodes().to_vec();
    nodes.sort_by_key(|&n| std::cmp::Reverse(topology.depth(n)));
    nodes
}

fn update_hyperplanes(state: &mut ChainState, kappa_sign: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let params = &mut state.params;
    let dim = params.d_x();
    for &n in params.topology.internal_nodes() {
        let h = update_hyperplane(
            n,
            &state.latents,
            &params.topology,
            dim,
            params.priors.hyperplane_var,
            kappa_sign,
            rng,
        )?;
        params.hyperplanes.set(n, h);
    }
    Ok(())
}

fn update_emissions(state: &mut ChainState, trials: &[Trial], rng: &mut ChaCha8Rng) -> Result<()> {
    let params = &mut state.params;
    let prior = &params.priors.emission;
    match params.emission.kind {
        ObservationKind::Gaussian => {
            let stats = emission_stats(trials, &state.latents, params.d_x(), params.d_y());
            let (w, s) = update_emission_gaussian(&stats, prior, rng)?;
            params.emission.set_weights(&w);
            params.emission.s = Some(s);
        }
        ObservationKind::Bernoulli => {
            let w = update_emission_bernoulli(trials, &state.latents, prior, rng)?;
            params.emission.set_weights(&w);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedSample {
    pub iteration: usize,
    pub log_joint: f64,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainRecord {
    pub samples: Vec<RetainedSample>,
    /// Log-joint after each sweep.
    pub log_joint: Vec<f64>,
    /// Seconds spent in each sweep.
    pub wall_time: Vec<f64>,
    /// Iterations where normalisation was skipped, with the reason.
    #[serde(default)]
    pub normalization_skipped: Vec<(usize, String)>,
}

impl ChainRecord {
    /// Retained sample with the highest log-joint; the earliest wins ties.
    pub fn best(&self) -> Option<&RetainedSample> {
        self.samples
            .iter()
            .fold(None, |best: Option<&RetainedSample>, s| match best {
                Some(b) if b.log_joint >= s.log_joint => Some(b),
                _ => Some(s),
            })
    }

    /// Equality of everything except wall-clock timings.
    pub fn same_draws(&self, other: &ChainRecord) -> bool {
        self.samples == other.samples
            && self.log_joint.len() == other.log_joint.len()
            && self.log_joint.iter().zip(&other.log_joint).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.normalization_skipped == other.normalization_skipped
    }

    /// Trailing moving average of the log-joint trace over `window` iterations.
    pub fn trailing_average(&self, window: usize) -> Vec<f64> {
        trailing_average(&self.log_joint, window)
    }
}

pub fn trailing_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub const CHECKPOINT_SCHEMA: u32 = 1;

/// Everything needed to continue a chain, given the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: GibbsConfig,
    /// Number of sweeps already completed.
    pub iteration: usize,
    /// Trial ids in the order of `state.latents`.
    pub trial_ids: Vec<u64>,
    pub state: ChainState,
    pub record: ChainRecord,
}

/// A running chain over a fixed data set.
#[derive(Debug, Clone)]
pub struct Chain {
    config: GibbsConfig,
    trials: Vec<Trial>,
    state: ChainState,
    record: ChainRecord,
    iteration: usize,
}

fn sort_by_id(trials: Vec<Trial>, latents: Vec<LatentState>) -> Result<(Vec<Trial>, Vec<LatentState>)> {
    if trials.len() != latents.len() {
        return Err(Error::invalid(format!("{} trials but {} latent paths", trials.len(), latents.len())));
    }
    let mut pairs: Vec<_> = trials.into_iter().zip(latents).collect();
    pairs.sort_by_key(|(t, _)| t.id);
    if let Some(w) = pairs.windows(2).find(|w| w[0].0.id == w[1].0.id) {
        return Err(Error::invalid(format!("duplicate trial id {}", w[0].0.id)));
    }
    Ok(pairs.into_iter().unzip())
}

impl Chain {
    /// `init.latents[i]` belongs to `trials[i]`; both are reordered by trial id.
    pub fn new(config: GibbsConfig, trials: Vec<Trial>, init: ChainState) -> Result<Self> {
        config.validate()?;
        init.params.validate()?;
        let (trials, latents) = sort_by_id(trials, init.latents)?;
        let state = ChainState { params: init.params, latents };
        crate::model::log_joint(&state.params, &trials, &state.latents)?;
        Ok(Chain { config, trials, state, record: ChainRecord::default(), iteration: 0 })
    }

    pub fn resume(checkpoint: Checkpoint, trials: Vec<Trial>) -> Result<Self> {
        if checkpoint.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Schema(format!(
                "checkpoint schema {} is not supported (expected {CHECKPOINT_SCHEMA})",
                checkpoint.schema_version
            )));
        }
        let mut trials = trials;
        trials.sort_by_key(|t| t.id);
        let ids: Vec<u64> = trials.iter().map(|t| t.id).collect();
        if ids != checkpoint.trial_ids {
            return Err(Error::invalid("checkpoint was written for a different set of trials"));
        }
        let mut chain = Chain::new(checkpoint.config, trials, checkpoint.state)?;
        chain.record = checkpoint.record;
        chain.iteration = checkpoint.iteration;
        Ok(chain)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA,
            config: self.config.clone(),
            iteration: self.iteration,
            trial_ids: self.trials.iter().map(|t| t.id).collect(),
            state: self.state.clone(),
            record: self.record.clone(),
        }
    }

    pub fn config(&self) -> &GibbsConfig {
        &self.config
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn record(&self) -> &ChainRecord {
        &self.record
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.num_iterations
    }

    /// Runs one sweep and records it.
    pub fn step(&mut self) -> Result<()> {
        let i = self.iteration;
        let start = now();
        let outcome = gibbs_sweep(&mut self.state, &self.trials, &self.config, i)?;
        if let Some(NormalizeOutcome::Skipped { reason }) = outcome {
            self.record.normalization_skipped.push((i, reason));
        }
        let lj = log_joint(&self.state.params, &self.trials, &self.state.latents).map_err(|e| e.at_iteration(i))?;
        if !lj.is_finite() {
            return Err(Error::numeric("log-joint is not finite").at_iteration(i));
        }
        self.record.log_joint.push(lj);
        self.record.wall_time.push(elapsed(start));
        if self.config.retains(i) {
            self.record.samples.push(RetainedSample { iteration: i, log_joint: lj, params: self.state.params.clone() });
        }
        self.iteration += 1;
        Ok(())
    }

    /// Runs until `num_iterations` sweeps are done, reporting each log-joint.
    pub fn run_with(&mut self, mut progress: impl FnMut(usize, f64)) -> Result<()> {
        while !self.is_done() {
            self.step()?;
            progress(self.iteration - 1, *self.record.log_joint.last().expect("just pushed"));
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_, _| {})
    }

    pub fn into_parts(self) -> (ChainRecord, ChainState, Vec<Trial>) {
        (self.record, self.state, self.trials)
    }
}

/// Runs a full chain from `init` and returns the record and the final state.
pub fn run_chain(config: &GibbsConfig, trials: &[Trial], init: ChainState) -> Result<(ChainRecord, ChainState)> {
    let mut chain = Chain::new(config.clone(), trials.to_vec(), init)?;
    chain.run()?;
    let (record, state, _) = chain.into_parts();
    Ok((record, state))
}

#[cfg(not(target_arch = "wasm32"))]
fn now() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn now() -> Option<()> {
    None
}

#[cfg(not(target_arch = "wasm32"))]
fn elapsed(start: Option<std::time::Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64())
}

#[cfg(target_arch = "wasm32")]
fn elapsed(_: Option<()>) -> f64 {
    0.0
}

/// Size and prior of the model used by [`geweke_test`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GewekeConfig {
    pub rounds: usize,
    pub steps: usize,
    pub num_leaves: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub num_trials: usize,
    pub kind: ObservationKind,
    pub prior: PriorConfig,
    /// Batches used for the batch-means standard error of the successive chain.
    pub batches: usize,
    pub seed: u64,
    /// Runs the sampler with the sign of `κ` flipped in the hyperplane update.
    pub flip_recurrence_kappa: bool,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        GewekeConfig {
            rounds: 5000,
            steps: 10,
            num_leaves: 2,
            d_x: 1,
            d_y: 2,
            num_trials: 2,
            kind: ObservationKind::Gaussian,
            prior: PriorConfig {
                tau: 0.2,
                noise_scale: 0.2,
                hyperplane_var: 1.0,
                emission_col_var: 1.0,
                emission_s_scale: 0.5,
                x0_var: 1.0,
                ..PriorConfig::default()
            },
            batches: 50,
            seed: 0,
            flip_recurrence_kappa: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeFunctional {
    pub name: String,
    pub forward_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub rounds: usize,
    pub functionals: Vec<GewekeFunctional>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.functionals.iter().map(|f| f.z.abs()).fold(0.0, f64::max)
    }
}

/// Names of the monitored functionals, in report order.
pub const GEWEKE_FUNCTIONALS: [&str; 20] = [
    "mean A_root",
    "mean A_root^2",
    "mean b_root",
    "mean A_leaf0",
    "mean A_leaf1",
    "mean b_leaf0",
    "mean b_leaf1",
    "log det Q_0",
    "log det Q_1",
    "mean R_root",
    "mean R_root^2",
    "r_root",
    "mean nu_root over time",
    "mean kappa*nu_root over time",
    "C[0,0]",
    "C[1,0]",
    "d[0]",
    "emission scale",
    "mean tanh(x)",
    "fraction z = leaf0",
];

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn functionals(params: &ModelParams, latents: &[LatentState]) -> [f64; 20] {
    let t = &params.topology;
    let root = &params.dynamics[NodeId::ROOT.0];
    let leaf = |k: usize| &params.dynamics[t.leaf(k.min(t.num_leaves() - 1)).0];
    let log_det = |m: &crate::linalg::Mat| m.determinant().abs().ln();
    let plane = params.hyperplanes.get(NodeId::ROOT).cloned().unwrap_or_else(|| Hyperplane::zeros(params.d_x()));
    let steps = || latents.iter().flat_map(|l| l.z.iter().enumerate().map(move |(i, &z)| (&l.x[i], z)));
    let kappa = |z: usize| match t.route(z).first() {
        Some(turn) => crate::conjugate::recurrence_kappa(turn.left),
        None => 0.0,
    };
    let e = &params.emission;
    let scale = match &e.s {
        Some(s) => log_det(s),
        None => e.d[e.d.len() - 1],
    };
    [
        root.a.mean(),
        root.a.map(|v| v * v).mean(),
        root.b.mean(),
        leaf(0).a.mean(),
        leaf(1).a.mean(),
        leaf(0).b.mean(),
        leaf(1).b.mean(),
        log_det(&params.noise[0]),
        log_det(&params.noise[params.noise.len() - 1]),
        plane.weight.mean(),
        plane.weight.map(|v| v * v).mean(),
        plane.offset,
        mean(steps().map(|(x, _)| plane.logit(x))),
        mean(steps().map(|(x, z)| kappa(z) * plane.logit(x))),
        e.c[(0, 0)],
        e.c[(e.c.nrows() - 1, 0)],
        e.d[0],
        scale,
        mean(latents.iter().flat_map(|l| l.x.iter().flat_map(|x| x.iter().map(|v| v.tanh())))),
        mean(latents.iter().flat_map(|l| l.z.iter().map(|&z| f64::from(z == 0)))),
    ]
}

/// Draws `x_0` from its prior and simulates every trial under `params`.
fn simulate_data(
    params: &ModelParams,
    cfg: &GewekeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Trial>, Vec<LatentState>)> {
    let init = &params.priors.initial;
    let mut trials = Vec::with_capacity(cfg.num_trials);
    let mut latents = Vec::with_capacity(cfg.num_trials);
    for id in 0..cfg.num_trials {
        let x0 = sample_gaussian(&init.mean, &init.cov, rng, "initial state covariance")?;
        let sim = simulate(params, &x0, cfg.steps, rng)?;
        trials.push(Trial::new(id as u64, sim.y));
        latents.push(LatentState::new(sim.x, sim.z));
    }
    Ok((trials, latents))
}

fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let batches = batches.clamp(2, xs.len().max(2));
    let size = xs.len() / batches;
    if size == 0 {
        return f64::INFINITY;
    }
    let means: Vec<f64> = (0..batches).map(|b| mean(xs[b * size..(b + 1) * size].iter().copied())).collect();
    let m = mean(means.iter().copied());
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

fn iid_se(xs: &[f64]) -> f64 {
    let m = mean(xs.iter().copied());
    let var = xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (xs.len().max(2) - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Compares functionals of independent draws from the joint distribution
/// with those of a chain that alternates a Gibbs sweep with re-simulating the
/// data from the current parameters. Both target the same joint, so large
/// z-scores point to an incorrect conditional update.
pub fn geweke_test(cfg: &GewekeConfig) -> Result<GewekeReport> {
    if cfg.rounds < 2 * cfg.batches.max(1) {
        return Err(Error::invalid("geweke rounds must be at least twice the batch count"));
    }
    if cfg.num_leaves < 2 || cfg.num_trials == 0 || cfg.steps == 0 {
        return Err(Error::invalid("geweke test needs K ≥ 2, at least one trial and T ≥ 1"));
    }
    let topology = TreeTopology::build(cfg.num_leaves)?;
    let priors = cfg.prior.build(cfg.d_x, cfg.d_y)?;
    let gibbs = GibbsConfig {
        num_iterations: cfg.rounds,
        burn_in: 0,
        thinning: 1,
        seed: cfg.seed,
        fix_emissions: false,
        fix_hyperplanes: false,
        normalize_every: 0,
        flip_recurrence_kappa: cfg.flip_recurrence_kappa,
    };

    let mut forward = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let mut rng = stream_rng(cfg.seed, r as u64, 2, 0);
        let params = sample_prior_params(&priors, &topology, cfg.kind, &mut rng)?;
        let (_, latents) = simulate_data(&params, cfg, &mut rng)?;
        forward.push(functionals(&params, &latents));
    }

    let mut rng = stream_rng(cfg.seed, 0, 3, 0);
    let params = sample_prior_params(&priors, &topology, cfg.kind, &mut rng)?;
    let (mut trials, latents) = simulate_data(&params, cfg, &mut rng)?;
    let mut state = ChainState { params, latents };
    let mut successive = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        gibbs_sweep(&mut state, &trials, &gibbs, r)?;
        successive.push(functionals(&state.params, &state.latents));
        let mut rng = stream_rng(cfg.seed, r as u64, 4, 0);
        let (t, l) = simulate_data(&state.params, cfg, &mut rng).map_err(|e| e.at_iteration(r))?;
        trials = t;
        state.latents = l;
    }

    let functionals = GEWEKE_FUNCTIONALS
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let f: Vec<f64> = forward.iter().map(|v| v[j]).collect();
            let s: Vec<f64> = successive.iter().map(|v| v[j]).collect();
            let (mf, ms) = (mean(f.iter().copied()), mean(s.iter().copied()));
            let se = (iid_se(&f).powi(2) + batch_means_se(&s, cfg.batches).powi(2)).sqrt();
            let z = if se > 0.0 { (mf - ms) / se } else { 0.0 };
            GewekeFunctional { name: name.to_string(), forward_mean: mf, successive_mean: ms, z }
        })
        .collect();
    Ok(GewekeReport { rounds: cfg.rounds, functionals })
}
