//! Per-kind experiment bodies. Each returns its metric tables, per-seed
//! scalar metrics and a summary; nothing here touches the filesystem.

use erosion_core::geometry::{analyze_update, lambda_sweep, GeometryInstance, UpdateSpec};
use erosion_core::repository::{retained_usage, run_stream, StreamOutcome, StreamSpec};
use erosion_core::trainer::{forgetting_metrics, run_sequence, stage_specs, SyntheticTaskSpec, TrainConfig};
use erosion_core::{Mode, Rng};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, ExperimentKind, GeometryExperiment, ModelExperiment, RepoExperiment};
use crate::error::CliError;
use crate::output::{fmt_f64, Table};

/// Relative slack used when counting bound and monotonicity violations.
pub const GEOMETRY_SLACK: f64 = 1e-10;

/// One scalar metric for one seed and mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetric {
    pub seed: usize,
    pub mode: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub tables: Vec<Table>,
    pub seed_metrics: Vec<SeedMetric>,
    pub summary: Value,
}

/// Seed `index` of a run with master seed `master`.
pub fn seed_key(master: u64, index: usize) -> u64 {
    Rng::new(master).substream_indexed("seed", index as u64).key()
}

pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    match cfg.experiment_kind {
        ExperimentKind::GeometryVerify | ExperimentKind::GeometrySweep => {
            geometry(cfg, cfg.geometry.as_ref().expect("validated"))
        }
        ExperimentKind::ModelRun => model(cfg, cfg.model.as_ref().expect("validated")),
        ExperimentKind::RepoRun => repository(cfg, cfg.repository.as_ref().expect("validated")),
    }
}

fn metric(seed: usize, mode: &str, name: &str, value: f64) -> SeedMetric {
    SeedMetric {
        seed,
        mode: mode.to_string(),
        metric: name.to_string(),
        value,
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn max(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------- geometry

struct GeometrySeed {
    rows: Vec<Vec<String>>,
    max_rel_error: f64,
    max_slack: f64,
    bound_violations: usize,
    m_norm_violations: usize,
    surrogate_violations: usize,
    scaled_violations: usize,
    dim: usize,
}

const GEOMETRY_HEADER: [&str; 13] = [
    "seed",
    "dim",
    "update",
    "step_size",
    "lambda",
    "measured_erosion",
    "predicted_leading_term",
    "bound",
    "alignment_c",
    "update_m_norm",
    "new_task_surrogate",
    "relative_error",
    "bound_slack",
];

fn geometry_seed(cfg: &ExperimentConfig, g: &GeometryExperiment, seed: usize) -> Result<GeometrySeed, CliError> {
    let sweep = cfg.experiment_kind == ExperimentKind::GeometrySweep;
    let mut rng = Rng::new(seed_key(cfg.seed, seed));
    let inst = GeometryInstance::sample(&mut rng, &g.instance)?;
    let mut out = GeometrySeed {
        rows: Vec::new(),
        max_rel_error: 0.0,
        max_slack: f64::NEG_INFINITY,
        bound_violations: 0,
        m_norm_violations: 0,
        surrogate_violations: 0,
        scaled_violations: 0,
        dim: inst.dim(),
    };
    let row = |update: &str, eta: f64, r: &erosion_core::geometry::ErosionReport, rel: f64, slack: f64| {
        vec![
            seed.to_string(),
            inst.dim().to_string(),
            update.to_string(),
            fmt_f64(eta),
            fmt_f64(r.lambda),
            fmt_f64(r.measured_erosion),
            fmt_f64(r.predicted_leading_term),
            fmt_f64(r.bound),
            fmt_f64(r.alignment_c),
            fmt_f64(r.update_m_norm),
            fmt_f64(r.new_task_surrogate),
            fmt_f64(rel),
            fmt_f64(slack),
        ]
    };

    for &eta in &g.step_sizes {
        let r = analyze_update(&inst.ensemble, &UpdateSpec::Naive { step_size: eta }, &inst.gradient)?;
        let denom = r.predicted_leading_term.abs();
        let rel = if denom > 0.0 {
            (r.measured_erosion - r.predicted_leading_term).abs() / denom
        } else {
            r.measured_erosion.abs()
        };
        out.max_rel_error = out.max_rel_error.max(rel);
        out.rows.push(row("naive", eta, &r, rel, 0.0));
    }

    if !g.lambdas.is_empty() {
        let reports = if sweep {
            lambda_sweep(&inst.ensemble, &inst.gradient, &inst.new_task_hessian, &inst.metric, &g.lambdas)?
        } else {
            g.lambdas
                .iter()
                .map(|&lambda| {
                    let spec = UpdateSpec::Cpe {
                        lambda,
                        new_task_hessian: inst.new_task_hessian.clone(),
                        preservation_metric: inst.metric.clone(),
                    };
                    analyze_update(&inst.ensemble, &spec, &inst.gradient)
                })
                .collect::<erosion_core::Result<Vec<_>>>()?
        };
        for r in &reports {
            let slack = r.measured_erosion - r.bound;
            out.max_slack = out.max_slack.max(slack);
            if slack > GEOMETRY_SLACK {
                out.bound_violations += 1;
            }
            let l2 = r.lambda * r.lambda;
            let cap = r.bound * l2;
            if r.measured_erosion * l2 > cap + GEOMETRY_SLACK * cap.max(1.0) {
                out.scaled_violations += 1;
            }
            out.rows.push(row("cpe", 0.0, r, 0.0, slack));
        }
        if sweep {
            for w in reports.windows(2) {
                if w[1].update_m_norm > w[0].update_m_norm + GEOMETRY_SLACK {
                    out.m_norm_violations += 1;
                }
                if w[1].new_task_surrogate < w[0].new_task_surrogate - GEOMETRY_SLACK {
                    out.surrogate_violations += 1;
                }
            }
        }
    }
    Ok(out)
}

fn geometry(cfg: &ExperimentConfig, g: &GeometryExperiment) -> Result<ExperimentOutput, CliError> {
    let seeds: Vec<GeometrySeed> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|s| geometry_seed(cfg, g, s))
        .collect::<Result<_, _>>()?;

    let mut table = Table::new(format!("{}.csv", cfg.experiment_kind), &GEOMETRY_HEADER);
    let mut metrics = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        table.rows.extend(s.rows.iter().cloned());
        if !g.step_sizes.is_empty() {
            metrics.push(metric(i, "naive", "max_relative_error", s.max_rel_error));
        }
        if !g.lambdas.is_empty() {
            metrics.push(metric(i, "cpe", "max_bound_slack", s.max_slack));
        }
    }
    let total = |f: fn(&GeometrySeed) -> usize| seeds.iter().map(f).sum::<usize>();
    let mut summary = json!({
        "instances": seeds.len(),
        "dim_min_seen": seeds.iter().map(|s| s.dim).min(),
        "dim_max_seen": seeds.iter().map(|s| s.dim).max(),
    });
    if !g.step_sizes.is_empty() {
        summary["naive"] = json!({
            "updates": seeds.len() * g.step_sizes.len(),
            "max_relative_error": max(seeds.iter().map(|s| s.max_rel_error)),
        });
    }
    if !g.lambdas.is_empty() {
        summary["cpe"] = json!({
            "updates": seeds.len() * g.lambdas.len(),
            "max_bound_violation": max(seeds.iter().map(|s| s.max_slack)),
            "bound_violations": total(|s| s.bound_violations),
            "scaled_bound_violations": total(|s| s.scaled_violations),
        });
    }
    if cfg.experiment_kind == ExperimentKind::GeometrySweep {
        summary["path"] = json!({
            "m_norm_increases": total(|s| s.m_norm_violations),
            "surrogate_decreases": total(|s| s.surrogate_violations),
        });
    }
    Ok(ExperimentOutput {
        tables: vec![table],
        seed_metrics: metrics,
        summary,
    })
}

// ------------------------------------------------------------------- model

struct ModelSeed {
    rows: Vec<Vec<String>>,
    metrics: Vec<SeedMetric>,
}

fn model_seed(cfg: &ExperimentConfig, m: &ModelExperiment, seed: usize) -> Result<ModelSeed, CliError> {
    let key = seed_key(cfg.seed, seed);
    let base = SyntheticTaskSpec {
        seed: key,
        stage_index: 0,
        ..m.task.clone()
    };
    let specs = stage_specs(&base, m.n_stages);
    let train = TrainConfig {
        seed: key,
        ..m.train.clone()
    };
    let last = m.n_stages - 1;
    let mut out = ModelSeed {
        rows: Vec::new(),
        metrics: Vec::new(),
    };
    for &mode in &m.modes {
        let res = run_sequence(&specs, &train, mode)?;
        let r = &res.retention;
        for stage in 0..m.n_stages {
            for task in 0..=stage {
                let acc = r.get(task, stage).expect("filled by run_sequence");
                out.rows.push(vec![
                    seed.to_string(),
                    mode.to_string(),
                    stage.to_string(),
                    task.to_string(),
                    fmt_f64(acc),
                ]);
            }
        }
        let f = forgetting_metrics(r)?;
        let peak = r.get(0, 0).unwrap_or_default();
        let fin = r.get(0, last).unwrap_or_default();
        let name = mode.as_str();
        out.metrics.extend([
            metric(seed, name, "stage0_peak_acc", peak),
            metric(seed, name, "stage0_final_acc", fin),
            metric(seed, name, "stage0_drop", peak - fin),
            metric(seed, name, "final_stage_acc", r.get(last, last).unwrap_or_default()),
            metric(seed, name, "avg_forgetting", f.avg_forgetting),
            metric(seed, name, "final_avg_acc", f.final_avg_acc),
        ]);
    }
    Ok(out)
}

/// Values of `name` for `mode`, in seed order.
fn series(metrics: &[SeedMetric], mode: Mode, name: &str) -> Vec<f64> {
    metrics
        .iter()
        .filter(|m| m.mode == mode.as_str() && m.metric == name)
        .map(|m| m.value)
        .collect()
}

fn per_mode_means(metrics: &[SeedMetric], modes: &[Mode], names: &[&str]) -> Value {
    let mut out = Map::new();
    for &mode in modes {
        let mut m = Map::new();
        for name in names {
            m.insert(format!("mean_{name}"), json!(mean(&series(metrics, mode, name))));
        }
        out.insert(mode.to_string(), Value::Object(m));
    }
    Value::Object(out)
}

fn model(cfg: &ExperimentConfig, m: &ModelExperiment) -> Result<ExperimentOutput, CliError> {
    let seeds: Vec<ModelSeed> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|s| model_seed(cfg, m, s))
        .collect::<Result<_, _>>()?;
    let mut table = Table::new("model_run.csv".into(), &["seed", "mode", "stage", "task", "accuracy"]);
    let mut metrics = Vec::new();
    for s in seeds {
        table.rows.extend(s.rows);
        metrics.extend(s.metrics);
    }
    let names = [
        "stage0_peak_acc",
        "stage0_final_acc",
        "stage0_drop",
        "final_stage_acc",
        "avg_forgetting",
        "final_avg_acc",
    ];
    let mut summary = json!({
        "seeds": cfg.n_seeds,
        "stages": m.n_stages,
        "modes": per_mode_means(&metrics, &m.modes, &names),
    });
    if m.modes.contains(&Mode::Vanilla) && m.modes.contains(&Mode::Cpe) {
        let v0 = series(&metrics, Mode::Vanilla, "stage0_final_acc");
        let c0 = series(&metrics, Mode::Cpe, "stage0_final_acc");
        let vf = series(&metrics, Mode::Vanilla, "final_stage_acc");
        let cf = series(&metrics, Mode::Cpe, "final_stage_acc");
        let gaps: Vec<f64> = c0.iter().zip(&v0).map(|(c, v)| c - v).collect();
        let final_diff: Vec<f64> = cf.iter().zip(&vf).map(|(c, v)| c - v).collect();
        summary["paired"] = json!({
            "stage0_gap_mean": mean(&gaps),
            "stage0_cpe_wins": gaps.iter().filter(|&&g| g > 0.0).count(),
            "vanilla_stage0_drop_mean": mean(&series(&metrics, Mode::Vanilla, "stage0_drop")),
            "final_stage_diff_mean": mean(&final_diff),
            "final_stage_diff_max_abs": max(final_diff.iter().map(|d| d.abs())),
        });
    }
    Ok(ExperimentOutput {
        tables: vec![table],
        seed_metrics: metrics,
        summary,
    })
}

// -------------------------------------------------------------- repository

struct RepoSeed {
    events: Vec<Vec<String>>,
    usage: Vec<Vec<String>>,
    stages: Vec<Vec<String>>,
    metrics: Vec<SeedMetric>,
}

fn ids(xs: impl IntoIterator<Item = u64>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn opt(x: Option<u64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn repo_seed(cfg: &ExperimentConfig, r: &RepoExperiment, seed: usize) -> Result<RepoSeed, CliError> {
    let spec = StreamSpec {
        seed: seed_key(cfg.seed, seed),
        ..r.stream.clone()
    };
    let mut out = RepoSeed {
        events: Vec::new(),
        usage: Vec::new(),
        stages: Vec::new(),
        metrics: Vec::new(),
    };
    for policy in &r.policies {
        let res: StreamOutcome = run_stream(&spec, policy, r.capacity)?;
        let mode = policy.kind.as_str();
        let s = seed.to_string();
        for e in &res.events {
            let a = e.admission.clone().unwrap_or_default();
            out.events.push(vec![
                s.clone(),
                mode.to_string(),
                e.stage.to_string(),
                e.task_index.to_string(),
                e.domain.to_string(),
                (e.success as u8).to_string(),
                fmt_f64(e.covered_fraction),
                e.repo_size.to_string(),
                ids(e.retrieved.iter().copied()),
                (a.admitted as u8).to_string(),
                opt(a.merged_with),
                a.pair_merged.map(|(k, g)| format!("{k};{g}")).unwrap_or_default(),
                opt(a.evicted_id),
                (a.rejected as u8).to_string(),
                ids(e.newly_protected.iter().copied()),
                ids(e.protected_lost.iter().copied()),
            ]);
        }
        let rows = retained_usage(&res.stages)?;
        for (log, row) in res.stages.iter().zip(&rows) {
            for (origin, share) in row.shares.iter().enumerate() {
                out.usage.push(vec![
                    s.clone(),
                    mode.to_string(),
                    log.stage.to_string(),
                    origin.to_string(),
                    log.usage_by_origin[origin].to_string(),
                    fmt_f64(*share),
                    (row.empty_denominator as u8).to_string(),
                ]);
            }
            for d in &log.eval {
                out.stages.push(vec![
                    s.clone(),
                    mode.to_string(),
                    log.stage.to_string(),
                    log.domain.to_string(),
                    d.domain.to_string(),
                    fmt_f64(d.success_rate),
                    fmt_f64(log.train_success_rate),
                    log.repo_size.to_string(),
                    log.protected_count.to_string(),
                ]);
            }
        }
        let first = &res.stages[0];
        let last = res.stages.last().expect("stages nonempty");
        let old = first.domain;
        let initial = first.eval_success(old).unwrap_or_default();
        let fin = last.eval_success(old).unwrap_or_default();
        let lost: usize = res.events.iter().map(|e| e.protected_lost.len()).sum();
        let max_size = res.events.iter().map(|e| e.repo_size).max().unwrap_or(0);
        out.metrics.extend([
            metric(seed, mode, "origin0_share_first", rows[0].shares[0]),
            metric(seed, mode, "origin0_share_final", rows.last().expect("nonempty").shares[0]),
            metric(seed, mode, "old_domain_success_initial", initial),
            metric(seed, mode, "old_domain_success_final", fin),
            metric(seed, mode, "old_domain_drop", initial - fin),
            metric(seed, mode, "final_train_success", last.train_success_rate),
            metric(seed, mode, "protected_lost", lost as f64),
            metric(seed, mode, "max_repo_size", max_size as f64),
        ]);
    }
    Ok(out)
}

fn repository(cfg: &ExperimentConfig, r: &RepoExperiment) -> Result<ExperimentOutput, CliError> {
    let seeds: Vec<RepoSeed> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|s| repo_seed(cfg, r, s))
        .collect::<Result<_, _>>()?;
    let mut events = Table::new(
        "repo_events.csv".into(),
        &[
            "seed",
            "mode",
            "stage",
            "task_index",
            "domain",
            "success",
            "covered_fraction",
            "repo_size",
            "retrieved",
            "admitted",
            "merged_with",
            "pair_merged",
            "evicted_id",
            "rejected",
            "newly_protected",
            "protected_lost",
        ],
    );
    let mut usage = Table::new(
        "repo_usage.csv".into(),
        &["seed", "mode", "stage", "origin_stage", "uses", "share", "empty_denominator"],
    );
    let mut stages = Table::new(
        "repo_stages.csv".into(),
        &[
            "seed",
            "mode",
            "stage",
            "stage_domain",
            "eval_domain",
            "eval_success_rate",
            "train_success_rate",
            "repo_size",
            "protected_count",
        ],
    );
    let mut metrics = Vec::new();
    for s in seeds {
        events.rows.extend(s.events);
        usage.rows.extend(s.usage);
        stages.rows.extend(s.stages);
        metrics.extend(s.metrics);
    }
    let modes: Vec<Mode> = r.policies.iter().map(|p| p.kind).collect();
    let names = [
        "origin0_share_first",
        "origin0_share_final",
        "old_domain_success_initial",
        "old_domain_success_final",
        "old_domain_drop",
        "final_train_success",
    ];
    let max_size = metrics
        .iter()
        .filter(|m| m.metric == "max_repo_size")
        .map(|m| m.value as usize)
        .max()
        .unwrap_or(0);
    let lost: f64 = metrics
        .iter()
        .filter(|m| m.metric == "protected_lost")
        .map(|m| m.value)
        .sum();
    let mut summary = json!({
        "seeds": cfg.n_seeds,
        "capacity": r.capacity,
        "max_repo_size": max_size,
        "protected_deletions": lost as u64,
        "modes": per_mode_means(&metrics, &modes, &names),
    });
    if modes.contains(&Mode::Vanilla) && modes.contains(&Mode::Cpe) {
        let v = series(&metrics, Mode::Vanilla, "origin0_share_final");
        let c = series(&metrics, Mode::Cpe, "origin0_share_final");
        let vd = series(&metrics, Mode::Vanilla, "old_domain_drop");
        let cd = series(&metrics, Mode::Cpe, "old_domain_drop");
        summary["paired"] = json!({
            "origin0_share_final_cpe_ge_vanilla": c.iter().zip(&v).filter(|(c, v)| c >= v).count(),
            "origin0_share_final_gap_mean": mean(&c.iter().zip(&v).map(|(c, v)| c - v).collect::<Vec<_>>()),
            "old_domain_drop_vanilla_mean": mean(&vd),
            "old_domain_drop_cpe_mean": mean(&cd),
        });
    }
    Ok(ExperimentOutput {
        tables: vec![events, usage, stages],
        seed_metrics: metrics,
        summary,
    })
}
