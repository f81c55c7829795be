use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::output::{fmt_f64, write_json, RunManifest, Table, SEED_METRICS_FILE};

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const COMPARISON_SUMMARY_FILE: &str = "comparison_summary.json";

#[derive(Debug, Deserialize)]
struct Row {
    seed: usize,
    mode: String,
    metric: String,
    value: f64,
}

fn read_metrics(dir: &Path) -> Result<Vec<Row>, CliError> {
    let mut r = csv::Reader::from_path(dir.join(SEED_METRICS_FILE))?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

fn modes(rows: &[Row]) -> BTreeSet<String> {
    rows.iter().map(|r| r.mode.clone()).collect()
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub dir: PathBuf,
    pub summary: Value,
}

/// Paired per-seed deltas `b − a` of every shared metric.
///
/// Two single-mode runs are paired on (seed, metric), so a vanilla run can
/// be compared against a cpe run. Runs holding several modes are paired on
/// (seed, mode, metric) and must hold the same modes.
pub fn compare(dir_a: &Path, dir_b: &Path, out: &Path) -> Result<Comparison, CliError> {
    let (ma, mb) = (RunManifest::read(dir_a)?, RunManifest::read(dir_b)?);
    for (m, d) in [(&ma, dir_a), (&mb, dir_b)] {
        if let Some(e) = &m.error {
            return Err(CliError::MismatchedRuns(format!("{} failed: {e}", d.display())));
        }
    }
    if ma.experiment_kind != mb.experiment_kind {
        return Err(CliError::MismatchedRuns(format!(
            "experiment kinds differ: {:?} vs {:?}",
            ma.experiment_kind, mb.experiment_kind
        )));
    }
    if (ma.seed, ma.n_seeds) != (mb.seed, mb.n_seeds) {
        return Err(CliError::MismatchedRuns(format!(
            "seed lists differ: master {:?} x {:?} vs master {:?} x {:?}",
            ma.seed, ma.n_seeds, mb.seed, mb.n_seeds
        )));
    }
    let (ra, rb) = (read_metrics(dir_a)?, read_metrics(dir_b)?);
    let (sa, sb) = (modes(&ra), modes(&rb));
    let single = sa.len() == 1 && sb.len() == 1;
    if !single && sa != sb {
        return Err(CliError::MismatchedRuns(format!("mode sets differ: {sa:?} vs {sb:?}")));
    }
    let key = |r: &Row| {
        let mode = if single { String::new() } else { r.mode.clone() };
        (r.seed, mode, r.metric.clone())
    };
    let b_index: BTreeMap<_, &Row> = rb.iter().map(|r| (key(r), r)).collect();

    let mut table = Table::new(
        COMPARISON_FILE.into(),
        &["seed", "mode_a", "mode_b", "metric", "value_a", "value_b", "delta"],
    );
    let mut deltas: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut pairs: Vec<(&Row, &Row)> = ra
        .iter()
        .filter_map(|a| b_index.get(&key(a)).map(|b| (a, *b)))
        .collect();
    pairs.sort_by(|x, y| (x.0.seed, &x.0.mode, &x.0.metric).cmp(&(y.0.seed, &y.0.mode, &y.0.metric)));
    if pairs.is_empty() {
        return Err(CliError::MismatchedRuns("no shared seed metrics".into()));
    }
    for (a, b) in pairs {
        let d = b.value - a.value;
        let name = if single {
            a.metric.clone()
        } else {
            format!("{}/{}", a.mode, a.metric)
        };
        deltas.entry(name).or_default().push(d);
        table.rows.push(vec![
            a.seed.to_string(),
            a.mode.clone(),
            b.mode.clone(),
            a.metric.clone(),
            fmt_f64(a.value),
            fmt_f64(b.value),
            fmt_f64(d),
        ]);
    }

    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    table.write(out)?;
    let per_metric: serde_json::Map<String, Value> = deltas
        .into_iter()
        .map(|(name, ds)| {
            let n = ds.len();
            let v = json!({
                "pairs": n,
                "mean_delta": ds.iter().sum::<f64>() / n as f64,
                "positive": ds.iter().filter(|&&d| d > 0.0).count(),
                "negative": ds.iter().filter(|&&d| d < 0.0).count(),
                "zero": ds.iter().filter(|&&d| d == 0.0).count(),
            });
            (name, v)
        })
        .collect();
    let summary = json!({
        "run_a": dir_a.display().to_string(),
        "run_b": dir_b.display().to_string(),
        "experiment_kind": ma.experiment_kind,
        "metrics": per_metric,
    });
    write_json(out, COMPARISON_SUMMARY_FILE, &summary)?;
    Ok(Comparison {
        dir: out.to_path_buf(),
        summary,
    })
}
