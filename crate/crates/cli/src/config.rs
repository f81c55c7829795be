//! Experiment configuration: one JSON document per run.

use std::fmt;

use erosion_core::geometry::{validate_lambda_grid, InstanceConfig};
use erosion_core::repository::{PolicyConfig, StreamSpec};
use erosion_core::trainer::{SyntheticTaskSpec, TrainConfig};
use erosion_core::Mode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GeometryVerify,
    GeometrySweep,
    ModelRun,
    RepoRun,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GeometryVerify => "geometry_verify",
            Self::GeometrySweep => "geometry_sweep",
            Self::ModelRun => "model_run",
            Self::RepoRun => "repo_run",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryExperiment {
    #[serde(default)]
    pub instance: InstanceConfig,
    /// Naive step sizes, each applied to every instance.
    #[serde(default)]
    pub step_sizes: Vec<f64>,
    /// Penalty strengths; strictly increasing.
    #[serde(default)]
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelExperiment {
    /// Base task; its `seed` and `stage_index` are replaced per seed and
    /// stage.
    pub task: SyntheticTaskSpec,
    pub n_stages: usize,
    #[serde(default)]
    pub train: TrainConfig,
    pub modes: Vec<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepoExperiment {
    /// Stream template; its `seed` is replaced per seed.
    pub stream: StreamSpec,
    pub capacity: usize,
    /// One policy per mode.
    pub policies: Vec<PolicyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_kind: ExperimentKind,
    /// Master seed; seed `i` of a run uses the substream `(seed, i)`.
    #[serde(default)]
    pub seed: u64,
    pub n_seeds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repository: Option<RepoExperiment>,
}

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::ConfigInvalid {
        path: path.to_string(),
        message: message.into(),
    }
}

fn check_modes(path: &str, modes: &[Mode]) -> Result<(), CliError> {
    if modes.is_empty() {
        return Err(invalid(path, "at least one mode is required"));
    }
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].contains(m) {
            return Err(invalid(path, format!("mode {m} listed twice")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses a JSON document, reporting the path of the offending key.
    pub fn from_value(value: Value) -> Result<Self, CliError> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| invalid(".", e.to_string()))?;
        Self::from_value(value)
    }

    /// Checks every section before anything is computed.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.n_seeds == 0 {
            return Err(invalid("n_seeds", "must be >= 1"));
        }
        let sections = [
            ("geometry", self.geometry.is_some()),
            ("model", self.model.is_some()),
            ("repository", self.repository.is_some()),
        ];
        let wanted = match self.experiment_kind {
            ExperimentKind::GeometryVerify | ExperimentKind::GeometrySweep => "geometry",
            ExperimentKind::ModelRun => "model",
            ExperimentKind::RepoRun => "repository",
        };
        for (name, present) in sections {
            if name == wanted && !present {
                return Err(invalid(
                    name,
                    format!("required for experiment_kind {}", self.experiment_kind),
                ));
            }
            if name != wanted && present {
                return Err(invalid(
                    name,
                    format!("not used by experiment_kind {}", self.experiment_kind),
                ));
            }
        }
        if let Some(g) = &self.geometry {
            g.instance
                .validate()
                .map_err(|e| invalid("geometry.instance", e.to_string()))?;
            for (i, &eta) in g.step_sizes.iter().enumerate() {
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(invalid(&format!("geometry.step_sizes[{i}]"), "must be > 0"));
                }
            }
            let sweep = self.experiment_kind == ExperimentKind::GeometrySweep;
            if sweep || !g.lambdas.is_empty() {
                validate_lambda_grid(&g.lambdas)
                    .map_err(|e| invalid("geometry.lambdas", e.to_string()))?;
            }
            if !sweep && g.step_sizes.is_empty() && g.lambdas.is_empty() {
                return Err(invalid("geometry", "needs step_sizes or lambdas"));
            }
        }
        if let Some(m) = &self.model {
            m.task
                .validate()
                .map_err(|e| invalid("model.task", e.to_string()))?;
            m.train
                .validate()
                .map_err(|e| invalid("model.train", e.to_string()))?;
            if m.n_stages < 2 {
                return Err(invalid("model.n_stages", "must be >= 2"));
            }
            check_modes("model.modes", &m.modes)?;
        }
        if let Some(r) = &self.repository {
            r.stream
                .validate()
                .map_err(|e| invalid("repository.stream", e.to_string()))?;
            if r.capacity == 0 {
                return Err(invalid("repository.capacity", "must be >= 1"));
            }
            for (i, p) in r.policies.iter().enumerate() {
                p.validate()
                    .map_err(|e| invalid(&format!("repository.policies[{i}]"), e.to_string()))?;
            }
            let kinds: Vec<Mode> = r.policies.iter().map(|p| p.kind).collect();
            check_modes("repository.policies", &kinds)?;
        }
        Ok(())
    }

    /// Modes this run executes, in config order.
    pub fn modes(&self) -> Vec<Mode> {
        match (&self.model, &self.repository) {
            (Some(m), _) => m.modes.clone(),
            (_, Some(r)) => r.policies.iter().map(|p| p.kind).collect(),
            _ => Vec::new(),
        }
    }
}

/// Applies `key=value` overrides to a parsed but not yet typed document.
///
/// `key` is a dotted path (`model.train.lambda_ewc`, `geometry.lambdas.0`);
/// `value` is parsed as JSON and falls back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(assignment, "override must look like key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| invalid(key, format!("`{part}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| invalid(key, format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(invalid(key, format!("`{part}` is not inside an object"))),
        };
    }
    Err(invalid(key, "empty key"))
}
