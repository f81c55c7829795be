use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::{apply_override, ExperimentConfig, ExperimentKind};
use crate::error::CliError;
use crate::experiments::{execute, GEOMETRY_SLACK};
use crate::output::{
    config_digest, now, seed_metrics_table, write_json, RunManifest, SUMMARY_FILE,
};

/// Bundled configurations, one per acceptance experiment.
pub const PRESETS: &[(&str, &str)] = &[
    ("geometry-prop1", include_str!("../presets/geometry-prop1.json")),
    ("geometry-prop2-sweep", include_str!("../presets/geometry-prop2-sweep.json")),
    ("model-3stage", include_str!("../presets/model-3stage.json")),
    ("repo-3domain", include_str!("../presets/repo-3domain.json")),
    ("memory-gating", include_str!("../presets/memory-gating.json")),
];

pub const OUT_ENV: &str = "EROSION_LAB_OUT";
const DEFAULT_OUT_ROOT: &str = "runs";

pub fn preset(name: &str) -> Result<&'static str, CliError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| CliError::UnknownPreset(name.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigSource {
    Preset(String),
    File(PathBuf),
}

impl ConfigSource {
    fn name(&self) -> String {
        match self {
            Self::Preset(n) => n.clone(),
            Self::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into()),
        }
    }

    fn load(&self) -> Result<String, CliError> {
        match self {
            Self::Preset(n) => Ok(preset(n)?.to_string()),
            Self::File(p) => fs::read_to_string(p).map_err(|e| CliError::io(p, e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    pub source: ConfigSource,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub dim_max: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    /// `key=value` assignments, applied before the dedicated flags.
    pub overrides: Vec<String>,
}

impl RunRequest {
    pub fn preset(name: &str) -> Self {
        Self {
            source: ConfigSource::Preset(name.to_string()),
            seed: None,
            seeds: None,
            dim_max: None,
            out: None,
            jobs: None,
            overrides: Vec::new(),
        }
    }

    fn all_overrides(&self) -> Vec<String> {
        let mut v = self.overrides.clone();
        if let Some(s) = self.seed {
            v.push(format!("seed={s}"));
        }
        if let Some(k) = self.seeds {
            v.push(format!("n_seeds={k}"));
        }
        if let Some(d) = self.dim_max {
            v.push(format!("geometry.instance.dim_max={d}"));
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Value,
    pub manifest: RunManifest,
}

fn resolve(req: &RunRequest) -> Result<ExperimentConfig, CliError> {
    let text = req.source.load()?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| CliError::ConfigInvalid {
        path: ".".into(),
        message: e.to_string(),
    })?;
    for o in req.all_overrides() {
        apply_override(&mut doc, &o)?;
    }
    let cfg = ExperimentConfig::from_value(doc)?;
    cfg.validate()?;
    Ok(cfg)
}

/// `--out`, then the config's `output_dir`, then `$EROSION_LAB_OUT/<name>`,
/// then `runs/<name>`.
fn output_dir(req: &RunRequest, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(o) = &req.out {
        return o.clone();
    }
    if let Some(d) = cfg.and_then(|c| c.output_dir.as_ref()) {
        return PathBuf::from(d);
    }
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
    root.join(req.source.name())
}

/// Fixed behaviours that shape the outputs, recorded for the reader.
pub fn design_flags(cfg: &ExperimentConfig) -> Value {
    let seeds = json!({
        "per_seed_stream": "substream(\"seed\", index) of the master seed",
        "row_order": "seed, then mode, then stage",
        "real_format": "17 significant digits",
    });
    let specific = match cfg.experiment_kind {
        ExperimentKind::GeometryVerify | ExperimentKind::GeometrySweep => json!({
            "violation_slack": GEOMETRY_SLACK,
            "naive_report": "bound, alignment and lambda are zero; m-norm is the euclidean norm",
            "erosion_evaluation": "exact quadratic expansion around the anchor",
        }),
        ExperimentKind::ModelRun => {
            let m = cfg.model.as_ref().expect("validated");
            json!({
                "fisher": "true fisher diagonal, labels sampled from the model",
                "accumulation": "F <- gamma * F_old + F_new, anchor reset to latest parameters",
                "gamma_decay": m.train.gamma_decay,
                "fisher_samples": m.train.fisher_samples,
                "lambda_ewc": m.train.lambda_ewc,
                "penalty_step": "proximal",
                "vanilla_lambda": 0.0,
            })
        }
        ExperimentKind::RepoRun => {
            let r = cfg.repository.as_ref().expect("validated");
            json!({
                "lfu_tie_break": ["use_count", "origin_stage", "id"],
                "candidate_excluded_from_eviction": true,
                "cpe_overflow_order": ["merge_nearest", "merge_closest_unprotected_pair", "evict_least_used_unprotected", "reject"],
                "merge_rule": "merged_from-weighted centroid, counts summed, min id and origin kept",
                "evidence_gating": "after every task (cpe)",
                "usage_aging_interval": r.stream.usage_aging_interval,
                "capacity": r.capacity,
                "policies": r.policies,
            })
        }
    };
    json!({ "common": seeds, "experiment": specific })
}

/// Runs one experiment end to end and writes its files.
///
/// A config error leaves only a manifest with the error recorded; an
/// experiment failure leaves the manifest and nothing else.
pub fn run(req: &RunRequest) -> Result<RunOutcome, CliError> {
    let started = now();
    let resolved = resolve(req);
    let dir = output_dir(req, resolved.as_ref().ok());
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let mut manifest = RunManifest {
        experiment_kind: None,
        config_digest: None,
        seed: None,
        n_seeds: None,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: String::new(),
        outputs: Vec::new(),
        design_flags: Value::Null,
        error: None,
        config: None,
    };
    let cfg = match resolved {
        Ok(c) => c,
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.finished = now();
            manifest.write(&dir)?;
            return Err(e);
        }
    };
    manifest.experiment_kind = Some(cfg.experiment_kind.to_string());
    manifest.config_digest = Some(config_digest(&cfg));
    manifest.seed = Some(cfg.seed);
    manifest.n_seeds = Some(cfg.n_seeds);
    manifest.design_flags = design_flags(&cfg);
    manifest.config = Some(ExperimentConfig {
        output_dir: None,
        ..cfg.clone()
    });

    let result = match req.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()?
            .install(|| execute(&cfg)),
        None => execute(&cfg),
    };
    let out = match result {
        Ok(o) => o,
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.finished = now();
            manifest.write(&dir)?;
            return Err(e);
        }
    };

    let mut files = Vec::new();
    for t in out.tables.iter().chain(std::iter::once(&seed_metrics_table(&out.seed_metrics))) {
        t.write(&dir)?;
        files.push(t.file.clone());
    }
    write_json(&dir, SUMMARY_FILE, &out.summary)?;
    files.push(SUMMARY_FILE.to_string());
    manifest.outputs = files;
    manifest.finished = now();
    manifest.write(&dir)?;
    Ok(RunOutcome {
        dir,
        summary: out.summary,
        manifest,
    })
}

/// Metric CSVs of a finished run, for byte comparisons.
pub fn metric_files(dir: &Path, manifest: &RunManifest) -> Vec<PathBuf> {
    manifest
        .outputs
        .iter()
        .filter(|f| f.ends_with(".csv"))
        .map(|f| dir.join(f))
        .collect()
}
