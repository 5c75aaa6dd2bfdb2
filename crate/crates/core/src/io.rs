//! JSON file formats: datasets, ground truth, run configurations and fitted
//! models. Every document carries a `schema_version` that is checked before
//! the rest of the document is parsed.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::ForecastConfig;
use crate::gibbs::{ChainRecord, ChainState, GibbsConfig};
use crate::init::{initialize, InitConfig};
use crate::linalg::Vector;
use crate::model::{ModelParams, ObservationKind, PriorConfig, Trial};
use crate::serde_mat::rows_to_vectors;
use crate::tree::TreeTopology;

pub const TRIAL_SCHEMA: u32 = 1;
pub const TRUTH_SCHEMA: u32 = 1;
pub const MODEL_SCHEMA: u32 = 1;

fn check_schema(value: &serde_json::Value, expected: u32, what: &str) -> Result<()> {
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == expected as u64 => Ok(()),
        Some(v) => Err(Error::Schema(format!("{what}: schema_version {v} is not supported (expected {expected})"))),
        None => Err(Error::Schema(format!("{what}: missing schema_version"))),
    }
}

fn parse_versioned<T: DeserializeOwned>(text: &str, expected: u32, what: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    check_schema(&value, expected, what)?;
    serde_json::from_value(value).map_err(|e| Error::Schema(format!("{what}: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub id: u64,
    #[serde(rename = "T")]
    pub len: usize,
    /// `T × d_y`, row-major.
    pub y: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialFile {
    pub schema_version: u32,
    pub d_y: usize,
    pub kind: ObservationKind,
    pub trials: Vec<TrialRecord>,
    pub provenance: Provenance,
}

impl TrialFile {
    pub fn new(kind: ObservationKind, trials: &[Trial], provenance: Provenance) -> Result<Self> {
        let d_y = trials.first().and_then(|t| t.y.first()).map_or(0, |y| y.len());
        let file = TrialFile {
            schema_version: TRIAL_SCHEMA,
            d_y,
            kind,
            trials: trials
                .iter()
                .map(|t| TrialRecord { id: t.id, len: t.len(), y: t.y.iter().map(|v| v.iter().copied().collect()).collect() })
                .collect(),
            provenance,
        };
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_y == 0 {
            return Err(Error::Schema("d_y must be positive".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for t in &self.trials {
            if !ids.insert(t.id) {
                return Err(Error::Schema(format!("duplicate trial id {}", t.id)));
            }
            if t.y.len() != t.len {
                return Err(Error::Schema(format!("trial {}: T = {} but y has {} rows", t.id, t.len, t.y.len())));
            }
            if let Some(r) = t.y.iter().position(|r| r.len() != self.d_y) {
                return Err(Error::Schema(format!("trial {}: row {r} does not have {} entries", t.id, self.d_y)));
            }
            if t.y.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("trial {}: non-finite observation", t.id)));
            }
            if self.kind == ObservationKind::Bernoulli && t.y.iter().flatten().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Schema(format!("trial {}: Bernoulli entries must be 0 or 1", t.id)));
            }
        }
        Ok(())
    }

    pub fn to_trials(&self) -> Result<Vec<Trial>> {
        self.validate()?;
        self.trials
            .iter()
            .map(|t| Ok(Trial::new(t.id, rows_to_vectors::<serde_json::Error>(t.y.clone(), self.d_y)?)))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: TrialFile = parse_versioned(text, TRIAL_SCHEMA, "trial file")?;
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Latent path of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub id: u64,
    /// States `x_0..x_T` (or `x_1..x_T` for ODE systems), row-major.
    pub x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<usize>>,
}

/// Ground truth written alongside a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub schema_version: u32,
    pub trials: Vec<TruthRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ModelParams>,
    /// Generator-specific values such as per-trajectory currents or the
    /// projection matrix.
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl TruthFile {
    pub fn new(ids: &[u64], x: &[Vec<Vector>], z: Option<&[Vec<usize>]>) -> Self {
        let trials = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| TruthRecord {
                id,
                x: x[i].iter().map(|v| v.iter().copied().collect()).collect(),
                z: z.map(|z| z[i].clone()),
            })
            .collect();
        TruthFile { schema_version: TRUTH_SCHEMA, trials, params: None, extra: serde_json::Value::Null }
    }

    pub fn states(&self, i: usize) -> Vec<Vector> {
        self.trials[i].x.iter().map(|r| Vector::from_vec(r.clone())).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        parse_versioned(&read_text(path)?, TRUTH_SCHEMA, "ground-truth file")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    /// Balanced binary tree.
    #[default]
    Tree,
    /// Caterpillar tree: sequential stick-breaking.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_leaves: usize,
    pub d_x: usize,
    #[serde(default)]
    pub topology: TopologyKind,
    #[serde(default)]
    pub priors: PriorConfig,
}

impl ModelConfig {
    pub fn topology(&self) -> Result<TreeTopology> {
        match self.topology {
            TopologyKind::Tree => TreeTopology::build(self.num_leaves),
            TopologyKind::Sequential => TreeTopology::sequential(self.num_leaves),
        }
    }
}

/// Everything needed to fit and evaluate one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub gibbs: GibbsConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub eval: ForecastConfig,
}

/// Output of [`RunConfig::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub record: ChainRecord,
    pub state: ChainState,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model.num_leaves == 0 {
            return Err(Error::invalid("model.num_leaves must be at least 1"));
        }
        if self.model.d_x == 0 {
            return Err(Error::invalid("model.d_x must be at least 1"));
        }
        self.model.topology()?;
        self.model.priors.build(self.model.d_x, 1).map_err(|e| Error::invalid(format!("model.priors: {e}")))?;
        self.gibbs.validate().map_err(|e| Error::invalid(format!("gibbs: {e}")))?;
        self.init.validate()?;
        self.eval.validate().map_err(|e| Error::invalid(format!("eval: {e}")))?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::invalid(format!("run config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    /// Initialisation followed by the Gibbs chain.
    pub fn fit(&self, trials: &[Trial], kind: ObservationKind) -> Result<Fit> {
        self.fit_with(trials, kind, |_, _| {})
    }

    pub fn fit_with(&self, trials: &[Trial], kind: ObservationKind, progress: impl FnMut(usize, f64)) -> Result<Fit> {
        self.validate()?;
        let d_y = trials.first().and_then(|t| t.y.first()).map(|y| y.len()).ok_or_else(|| Error::invalid("no data"))?;
        let priors = self.model.priors.build(self.model.d_x, d_y)?;
        let topology = self.model.topology()?;
        let init = initialize(trials, kind, &topology, self.model.d_x, &priors, &self.init)?;
        let mut chain = crate::gibbs::Chain::new(self.gibbs.clone(), trials.to_vec(), init)?;
        chain.run_with(progress)?;
        let (record, state, _) = chain.into_parts();
        Ok(Fit { record, state })
    }
}

/// A fitted model: configuration, retained samples and the final chain state
/// (whose latents warm-start forecasting on the training trials).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub name: String,
    pub kind: ObservationKind,
    pub config: RunConfig,
    /// Training trial ids, aligned with `state.latents`.
    pub trial_ids: Vec<u64>,
    pub record: ChainRecord,
    pub state: ChainState,
}

impl ModelFile {
    pub fn new(name: &str, kind: ObservationKind, config: RunConfig, trials: &[Trial], fit: Fit) -> Self {
        let trial_ids = trials.iter().map(|t| t.id).collect();
        ModelFile {
            schema_version: MODEL_SCHEMA,
            name: name.to_string(),
            kind,
            config,
            trial_ids,
            record: fit.record,
            state: fit.state,
        }
    }

    pub fn samples(&self) -> Vec<ModelParams> {
        self.record.samples.iter().map(|s| s.params.clone()).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ModelFile = parse_versioned(text, MODEL_SCHEMA, "model file")?;
        if file.record.samples.is_empty() {
            return Err(Error::Schema("model file holds no retained samples".into()));
        }
        if file.state.latents.len() != file.trial_ids.len() {
            return Err(Error::Schema("model file: latents do not match trial ids".into()));
        }
        for s in &file.record.samples {
            s.params.validate().map_err(|e| Error::Schema(format!("model file: {e}")))?;
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
