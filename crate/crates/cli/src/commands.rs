use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use trslds::evaluation::{k_step_forecast, ForecastReport};
use trslds::gibbs::{geweke_test, GewekeConfig};
use trslds::io::{write_json, ModelFile, Provenance, RunConfig, TrialFile, TruthFile};
use trslds::linalg::{Mat, Vector};
use trslds::model::{EmissionParams, ObservationKind, Trial};
use trslds::synthetic::{self, BernoulliSpec, FhnSpec, LorenzSpec, NascarGates, NascarSpec};
use trslds::Error;

use crate::{Kind, System};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::invalid(msg).into()
}

/// `data.json` → `data.truth.json`.
fn default_truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.truth.json"))
}

fn projection<R: Rng + ?Sized>(d_y: usize, d_x: usize, noise_var: f64, rng: &mut R) -> Result<EmissionParams> {
    if d_y < d_x {
        bail!(invalid(format!("--d-y must be at least {d_x}")));
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        bail!(invalid("--noise-var must be positive"));
    }
    let c = synthetic::random_orthonormal(d_y, d_x, rng);
    Ok(EmissionParams::gaussian(c, Vector::zeros(d_y), Mat::identity(d_y, d_y) * noise_var))
}

fn reject(flag: &str, value: bool, system: System) -> Result<()> {
    if value {
        bail!(invalid(format!("{flag} does not apply to {system:?}").to_lowercase()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    system: System,
    out: &Path,
    truth_path: Option<PathBuf>,
    n: Option<usize>,
    points: Option<usize>,
    seed: u64,
    d_y: Option<usize>,
    d_x: Option<usize>,
    noise_var: Option<f64>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if !matches!(system, System::Lds) {
        reject("--d-x", d_x.is_some(), system)?;
    }
    let (kind, trials, truth, params, generator) = match system {
        System::Fhn => {
            reject("--d-y", d_y.is_some(), system)?;
            reject("--noise-var", noise_var.is_some(), system)?;
            let d = FhnSpec::default();
            let spec = FhnSpec { trajectories: n.unwrap_or(d.trajectories), points: points.unwrap_or(d.points), ..d };
            let data = synthetic::simulate_fhn(&spec, &mut rng)?;
            let emission = synthetic::fhn_emission();
            let trials = synthetic::observe(&data.x, &emission, &mut rng)?;
            let ids: Vec<u64> = trials.iter().map(|t| t.id).collect();
            let mut truth = TruthFile::new(&ids, &data.x, None);
            truth.extra = json!({ "i_ext": data.i_ext, "emission": emission });
            (ObservationKind::Gaussian, trials, truth, serde_json::to_value(&spec)?, "fhn")
        }
        System::Lorenz => {
            let d = LorenzSpec::default();
            let spec = LorenzSpec { trajectories: n.unwrap_or(d.trajectories), points: points.unwrap_or(d.points), ..d };
            let x = synthetic::simulate_lorenz(&spec, &mut rng)?;
            let emission = projection(d_y.unwrap_or(10), 3, noise_var.unwrap_or(1.0), &mut rng)?;
            let trials = synthetic::observe(&x, &emission, &mut rng)?;
            let ids: Vec<u64> = trials.iter().map(|t| t.id).collect();
            let mut truth = TruthFile::new(&ids, &x, None);
            truth.extra = json!({ "emission": emission });
            (ObservationKind::Gaussian, trials, truth, serde_json::to_value(&spec)?, "lorenz")
        }
        System::Nascar | System::NascarTree => {
            let gates = if matches!(system, System::Nascar) { NascarGates::Sequential } else { NascarGates::Tree };
            let d = NascarSpec::default();
            let spec =
                NascarSpec { trajectories: n.unwrap_or(d.trajectories), points: points.unwrap_or(d.points), gates, ..d };
            let mut model = synthetic::nascar_model(&spec)?;
            let data = synthetic::simulate_nascar(&spec, &mut rng)?;
            model.emission = projection(d_y.unwrap_or(10), 2, noise_var.unwrap_or(0.01), &mut rng)?;
            let trials = synthetic::observe(&data.x, &model.emission, &mut rng)?;
            let ids: Vec<u64> = trials.iter().map(|t| t.id).collect();
            let mut truth = TruthFile::new(&ids, &data.x, Some(&data.z));
            truth.params = Some(model);
            let name = if matches!(gates, NascarGates::Sequential) { "nascar" } else { "nascar-tree" };
            (ObservationKind::Gaussian, trials, truth, serde_json::to_value(&spec)?, name)
        }
        System::Lds => {
            reject("--noise-var", noise_var.is_some(), system)?;
            let (d_x, d_y) = (d_x.unwrap_or(2), d_y.unwrap_or(5));
            let (n, points) = (n.unwrap_or(10), points.unwrap_or(100));
            let model = synthetic::lds_model(d_x, d_y, &mut rng)?;
            let starts: Vec<Vector> = (0..n).map(|_| Vector::from_fn(d_x, |_, _| rng.random::<f64>() * 6.0 - 3.0)).collect();
            let data = synthetic::simulate_switching(&model, &starts, points, &mut rng)?;
            let trials = synthetic::observe(&data.x, &model.emission, &mut rng)?;
            let ids: Vec<u64> = trials.iter().map(|t| t.id).collect();
            let mut truth = TruthFile::new(&ids, &data.x, None);
            truth.params = Some(model);
            let spec = json!({ "trajectories": n, "points": points, "d_x": d_x, "d_y": d_y });
            (ObservationKind::Gaussian, trials, truth, spec, "lds")
        }
        System::Bernoulli => {
            reject("--noise-var", noise_var.is_some(), system)?;
            let d = BernoulliSpec::default();
            let spec = BernoulliSpec {
                trajectories: n.unwrap_or(d.trajectories),
                points: points.unwrap_or(d.points),
                d_y: d_y.unwrap_or(d.d_y),
                ..d
            };
            let (model, data, trials) = synthetic::simulate_bernoulli(&spec, &mut rng)?;
            let ids: Vec<u64> = trials.iter().map(|t| t.id).collect();
            let mut truth = TruthFile::new(&ids, &data.x, Some(&data.z));
            truth.params = Some(model);
            (ObservationKind::Bernoulli, trials, truth, serde_json::to_value(&spec)?, "bernoulli")
        }
    };
    let provenance = Provenance { generator: generator.to_string(), seed, params };
    TrialFile::new(kind, &trials, provenance)?.write(out)?;
    let truth_path = truth_path.unwrap_or_else(|| default_truth_path(out));
    truth.write(&truth_path)?;
    eprintln!(
        "wrote {} trials × {} points × {} to {} (truth: {})",
        trials.len(),
        trials.first().map_or(0, Trial::len),
        trials.first().and_then(|t| t.y.first()).map_or(0, |y| y.len()),
        out.display(),
        truth_path.display()
    );
    Ok(())
}

fn read_trials(path: &Path) -> Result<(ObservationKind, Vec<Trial>)> {
    let file = TrialFile::read(path).with_context(|| format!("reading {}", path.display()))?;
    let trials = file.to_trials()?;
    if trials.is_empty() {
        bail!(invalid(format!("{} holds no trials", path.display())));
    }
    Ok((file.kind, trials))
}

#[allow(clippy::too_many_arguments)]
pub fn fit(
    data: &Path,
    config_path: &Path,
    out: &Path,
    iters: Option<usize>,
    keep: Option<usize>,
    holdout: usize,
    seed: Option<u64>,
    name: &str,
    quiet: bool,
) -> Result<()> {
    let mut config = RunConfig::read(config_path).with_context(|| format!("config {}", config_path.display()))?;
    let g = &mut config.gibbs;
    let kept = keep.unwrap_or(g.num_iterations - g.burn_in);
    if let Some(n) = iters {
        g.num_iterations = n;
    }
    if kept == 0 || kept > g.num_iterations {
        bail!(invalid(format!("--keep must lie in 1..={}", g.num_iterations)));
    }
    g.burn_in = g.num_iterations - kept;
    if let Some(s) = seed {
        g.seed = s;
    }
    config.validate()?;
    let (kind, mut trials) = read_trials(data)?;
    if holdout > 0 {
        trials = synthetic::split_train_test(&trials, holdout)?.0;
    }

    let total = config.gibbs.num_iterations;
    let every = (total / 20).max(1);
    let start = std::time::Instant::now();
    let fit = config.fit_with(&trials, kind, |i, lj| {
        if !quiet && ((i + 1) % every == 0 || i + 1 == total) {
            eprintln!("iteration {:>5}/{total}  log-joint {lj:.3}  ({:.1}s)", i + 1, start.elapsed().as_secs_f64());
        }
    })?;
    let best = fit.record.best().map(|s| (s.iteration, s.log_joint));
    ModelFile::new(name, kind, config, &trials, fit).write(out)?;
    if let Some((it, lj)) = best {
        eprintln!("best retained sample: iteration {it}, log-joint {lj:.3}");
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

pub fn eval(
    model_path: &Path,
    data: &Path,
    k_max: Option<usize>,
    holdout: Option<usize>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let model = ModelFile::read(model_path).with_context(|| format!("model {}", model_path.display()))?;
    let (kind, trials) = read_trials(data)?;
    if kind != model.kind {
        bail!(invalid("data and model use different observation kinds"));
    }
    let mut config = model.config.eval.clone();
    if let Some(k) = k_max {
        config.k_max = k;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let len = trials[0].len();
    if trials.iter().any(|t| t.len() != len) {
        bail!(invalid("eval needs trials of equal length"));
    }
    let holdout = holdout.unwrap_or(config.k_max);
    if holdout < config.k_max || holdout >= len {
        bail!(invalid(format!("--holdout must lie in {}..{len}", config.k_max)));
    }
    let first_origin = len - holdout;

    // The fit's final latents are the natural starting point when the data are
    // the training trials extended by the held-out points.
    let ids: Vec<u64> = trials.iter().map(|t| t.id).collect();
    let warm = (ids == model.trial_ids && model.state.latents.iter().all(|l| l.len() == first_origin))
        .then_some(model.state.latents.as_slice());

    let samples = model.samples();
    let forecasts = k_step_forecast(&samples, &trials, warm, first_origin, &config)?;
    let report = ForecastReport::new(&model.name, config.seed, &trials, &forecasts)?;

    let csv = out.with_extension("csv");
    std::fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    write_json(&out.with_extension("json"), &report)?;
    println!("{:>3}  {:>12}  {:>8}", "k", "mse", "r2");
    for k in 0..report.k_max {
        let r2 = report.r2[k].map_or("-".to_string(), |r| format!("{r:.4}"));
        println!("{:>3}  {:>12.6}  {r2:>8}", k + 1, report.mse[k]);
    }
    if let Some(m) = report.mean_r2() {
        println!("mean R² over k = 1..{}: {m:.4}", report.k_max);
    }
    Ok(())
}

pub fn geweke(rounds: usize, seed: u64, kind: Kind, mutant: bool, out: Option<PathBuf>) -> Result<()> {
    let kind = match kind {
        Kind::Gaussian => ObservationKind::Gaussian,
        Kind::Bernoulli => ObservationKind::Bernoulli,
    };
    let cfg = GewekeConfig { rounds, seed, kind, flip_recurrence_kappa: mutant, ..GewekeConfig::default() };
    let report = geweke_test(&cfg)?;
    println!("{:<28} {:>12} {:>12} {:>8}", "functional", "forward", "successive", "z");
    for f in &report.functionals {
        println!("{:<28} {:>12.5} {:>12.5} {:>8.3}", f.name, f.forward_mean, f.successive_mean, f.z);
    }
    println!("max |z| = {:.3}", report.max_abs_z());
    if let Some(path) = out {
        write_json(&path, &report)?;
    }
    Ok(())
}
