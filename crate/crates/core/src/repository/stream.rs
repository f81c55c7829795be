use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::entry::{check_unit, PolicyConfig};
use super::store::{AdmissionReport, Repository};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};
use crate::Mode;

/// A task expressed as the capabilities it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub required: Vec<Vector>,
    pub domain: usize,
    pub stage: usize,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<()> {
        if self.required.is_empty() {
            return Err(Error::InvalidArgument("task has no requirements".into()));
        }
        for r in &self.required {
            check_unit(r)?;
        }
        let d = self.required[0].len();
        for r in &self.required {
            crate::error::check_dim(d, r.len())?;
        }
        Ok(())
    }

    /// Retrieval query: the mean requirement.
    pub fn query(&self) -> Vector {
        let n = self.required.len() as f64;
        let d = self.required[0].len();
        (0..d)
            .map(|i| self.required.iter().map(|r| r[i]).sum::<f64>() / n)
            .collect()
    }
}

/// A sequence of domains to stream through one repository.
///
/// Each domain owns `prototypes_per_domain` capability prototypes drawn
/// around its center with `within_domain_spread`. A task needs
/// `requirements_per_task` distinct prototypes of its domain, each jittered
/// by `requirement_jitter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub stages: Vec<usize>,
    pub tasks_per_stage: usize,
    /// One per domain; empty means draw them from the seed.
    #[serde(default)]
    pub domain_centers: Vec<Vector>,
    pub within_domain_spread: f64,
    pub requirements_per_task: usize,
    pub embedding_dim: usize,
    pub seed: u64,
    pub prototypes_per_domain: usize,
    pub requirement_jitter: f64,
    /// Held-out tasks per domain, re-evaluated after every stage.
    pub eval_tasks_per_domain: usize,
    /// Halve usage counts after every this many streamed tasks; 0 disables.
    #[serde(default)]
    pub usage_aging_interval: usize,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            stages: vec![0, 1, 2],
            tasks_per_stage: 500,
            domain_centers: Vec::new(),
            within_domain_spread: 0.2,
            requirements_per_task: 2,
            embedding_dim: 16,
            seed: 0,
            prototypes_per_domain: 12,
            requirement_jitter: 0.02,
            eval_tasks_per_domain: 50,
            usage_aging_interval: 50,
        }
    }
}

impl StreamSpec {
    pub fn n_domains(&self) -> usize {
        self.stages.iter().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.stages.is_empty() {
            return bad("stages must be nonempty");
        }
        if self.tasks_per_stage == 0 || self.eval_tasks_per_domain == 0 {
            return bad("tasks_per_stage and eval_tasks_per_domain must be >= 1");
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim must be >= 2");
        }
        if self.requirements_per_task == 0
            || self.requirements_per_task > self.prototypes_per_domain
        {
            return bad("requirements_per_task must be in 1..=prototypes_per_domain");
        }
        for x in [self.within_domain_spread, self.requirement_jitter] {
            if !(x.is_finite() && x >= 0.0) {
                return bad("spread and jitter must be finite and >= 0");
            }
        }
        if !self.domain_centers.is_empty() {
            if self.domain_centers.len() < self.n_domains() {
                return bad("one domain center is needed per domain label");
            }
            for c in &self.domain_centers {
                crate::error::check_dim(self.embedding_dim, c.len())?;
                check_unit(c)?;
            }
        }
        Ok(())
    }

    fn centers(&self, root: &Rng) -> Vec<Vector> {
        if !self.domain_centers.is_empty() {
            return self.domain_centers.clone();
        }
        (0..self.n_domains())
            .map(|d| {
                root.substream_indexed("domain_center", d as u64)
                    .unit_vector(self.embedding_dim)
            })
            .collect()
    }
}

fn perturb(rng: &mut Rng, base: &[f64], std: f64) -> Vector {
    loop {
        let v: Vector = base.iter().map(|x| x + std * rng.normal()).collect();
        if let Some(u) = v.normalized() {
            return u;
        }
    }
}

/// Deterministic task generator for a [`StreamSpec`].
#[derive(Debug, Clone)]
pub struct TaskGenerator {
    prototypes: Vec<Vec<Vector>>,
    per_task: usize,
    jitter: f64,
}

impl TaskGenerator {
    pub fn new(spec: &StreamSpec) -> Result<Self> {
        spec.validate()?;
        let root = Rng::new(spec.seed);
        let prototypes = spec
            .centers(&root)
            .iter()
            .enumerate()
            .map(|(d, c)| {
                let mut rng = root.substream_indexed("prototypes", d as u64);
                (0..spec.prototypes_per_domain)
                    .map(|_| perturb(&mut rng, c, spec.within_domain_spread))
                    .collect()
            })
            .collect();
        Ok(Self {
            prototypes,
            per_task: spec.requirements_per_task,
            jitter: spec.requirement_jitter,
        })
    }

    pub fn prototypes(&self, domain: usize) -> &[Vector] {
        &self.prototypes[domain]
    }

    pub fn task(&self, rng: &mut Rng, domain: usize, stage: usize) -> TaskInstance {
        let protos = &self.prototypes[domain];
        let mut idx: Vec<usize> = (0..protos.len()).collect();
        rng.shuffle(&mut idx);
        let required = idx[..self.per_task]
            .iter()
            .map(|&i| perturb(rng, &protos[i], self.jitter))
            .collect();
        TaskInstance {
            required,
            domain,
            stage,
        }
    }
}

/// One record per streamed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub stage: usize,
    pub task_index: usize,
    pub domain: usize,
    pub success: bool,
    pub covered_fraction: f64,
    pub retrieved: Vec<u64>,
    pub admission: Option<AdmissionReport>,
    pub repo_size: usize,
    pub newly_protected: Vec<u64>,
    /// Ids protected before the step that are gone after it.
    pub protected_lost: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSuccess {
    pub domain: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: usize,
    pub domain: usize,
    /// `usage_by_origin[o]`: uses during this stage of entries whose
    /// origin stage is `o`, covering both the task stream and the
    /// end-of-stage held-out evaluation.
    pub usage_by_origin: Vec<u64>,
    pub train_success_rate: f64,
    /// Held-out success for every domain seen so far, in first-seen order.
    pub eval: Vec<DomainSuccess>,
    pub repo_size: usize,
    pub protected_count: usize,
}

impl StageLog {
    pub fn eval_success(&self, domain: usize) -> Option<f64> {
        self.eval
            .iter()
            .find(|d| d.domain == domain)
            .map(|d| d.success_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamOutcome {
    pub events: Vec<TaskEvent>,
    pub stages: Vec<StageLog>,
    pub repository: Repository,
}

fn protected_ids(repo: &Repository) -> BTreeSet<u64> {
    repo.entries()
        .iter()
        .filter(|e| e.protected)
        .map(|e| e.id)
        .collect()
}

fn attribute(usage: &mut [u64], repo: &Repository, ids: &[u64]) {
    for id in ids {
        if let Some(e) = repo.get(*id) {
            usage[e.origin_stage] += 1;
        }
    }
}

/// Streams every stage's tasks through one repository, carried forward
/// without replay.
pub fn run_stream(spec: &StreamSpec, policy: &PolicyConfig, capacity: usize) -> Result<StreamOutcome> {
    let gen = TaskGenerator::new(spec)?;
    let mut repo = Repository::new(capacity, policy.clone())?;
    let root = Rng::new(spec.seed);
    let synth_std = spec.within_domain_spread / 4.0;

    let mut eval_sets: Vec<(usize, Vec<TaskInstance>)> = Vec::new();
    let mut events = Vec::with_capacity(spec.stages.len() * spec.tasks_per_stage);
    let mut stages = Vec::with_capacity(spec.stages.len());

    for (s, &domain) in spec.stages.iter().enumerate() {
        if !eval_sets.iter().any(|(d, _)| *d == domain) {
            let mut rng = root.substream_indexed("eval", domain as u64);
            let tasks = (0..spec.eval_tasks_per_domain)
                .map(|_| gen.task(&mut rng, domain, s))
                .collect();
            eval_sets.push((domain, tasks));
        }
        let mut task_rng = root.substream_indexed("tasks", s as u64);
        let mut synth_rng = root.substream_indexed("synth", s as u64);
        let mut usage = vec![0u64; s + 1];
        let mut successes = 0usize;

        for i in 0..spec.tasks_per_stage {
            let task = gen.task(&mut task_rng, domain, s);
            let before = protected_ids(&repo);
            let out = repo.step_task(&task, &mut synth_rng, synth_std)?;
            attribute(&mut usage, &repo, &out.retrieved);
            let newly_protected = if policy.kind == Mode::Cpe {
                repo.apply_evidence_gating()?
            } else {
                Vec::new()
            };
            let protected_lost = before
                .into_iter()
                .filter(|id| repo.get(*id).is_none())
                .collect();
            successes += out.success as usize;
            if spec.usage_aging_interval > 0 && (i + 1) % spec.usage_aging_interval == 0 {
                repo.age_usage();
            }
            events.push(TaskEvent {
                stage: s,
                task_index: i,
                domain,
                success: out.success,
                covered_fraction: out.covered_fraction,
                retrieved: out.retrieved,
                admission: out.admission,
                repo_size: repo.len(),
                newly_protected,
                protected_lost,
            });
        }

        let eval = eval_sets
            .iter()
            .map(|(d, tasks)| {
                let mut ok = 0usize;
                for t in tasks {
                    let (success, _, ids) = repo.evaluate_task(t);
                    attribute(&mut usage, &repo, &ids);
                    ok += success as usize;
                }
                DomainSuccess {
                    domain: *d,
                    success_rate: ok as f64 / tasks.len() as f64,
                }
            })
            .collect();

        stages.push(StageLog {
            stage: s,
            domain,
            usage_by_origin: usage,
            train_success_rate: successes as f64 / spec.tasks_per_stage as f64,
            eval,
            repo_size: repo.len(),
            protected_count: protected_ids(&repo).len(),
        });
    }

    Ok(StreamOutcome {
        events,
        stages,
        repository: repo,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedUsageRow {
    pub stage: usize,
    /// Share of the stage's uses per origin stage `0..=stage`.
    pub shares: Vec<f64>,
    /// The stage recorded no uses; `shares` is all zero.
    pub empty_denominator: bool,
}

/// Normalized usage per origin stage for each logged stage.
pub fn retained_usage(stages: &[StageLog]) -> Result<Vec<RetainedUsageRow>> {
    if stages.is_empty() {
        return Err(Error::EmptyLog);
    }
    Ok(stages
        .iter()
        .map(|log| {
            let total: u64 = log.usage_by_origin.iter().sum();
            let shares = log
                .usage_by_origin
                .iter()
                .map(|&u| if total == 0 { 0.0 } else { u as f64 / total as f64 })
                .collect();
            RetainedUsageRow {
                stage: log.stage,
                shares,
                empty_denominator: total == 0,
            }
        })
        .collect())
}

/// Success rate over consecutive chunks of `chunk` events; a trailing
/// partial chunk is included.
pub fn chunk_success_rates(events: &[TaskEvent], chunk: usize) -> Result<Vec<f64>> {
    if events.is_empty() {
        return Err(Error::EmptyLog);
    }
    if chunk == 0 {
        return Err(Error::InvalidArgument("chunk size must be >= 1".into()));
    }
    Ok(events
        .chunks(chunk)
        .map(|c| c.iter().filter(|e| e.success).count() as f64 / c.len() as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(stage: usize, usage: Vec<u64>) -> StageLog {
        StageLog {
            stage,
            domain: stage,
            usage_by_origin: usage,
            train_success_rate: 0.0,
            eval: Vec::new(),
            repo_size: 0,
            protected_count: 0,
        }
    }

    #[test]
    fn retained_usage_arithmetic() {
        let rows = retained_usage(&[log(0, vec![4]), log(1, vec![3, 1])]).unwrap();
        assert_eq!(rows[0].shares, vec![1.0]);
        assert_eq!(rows[1].shares, vec![0.75, 0.25]);
        assert!(!rows[1].empty_denominator);
    }

    #[test]
    fn retained_usage_degenerate() {
        let rows = retained_usage(&[log(0, vec![0])]).unwrap();
        assert_eq!(rows[0].shares, vec![0.0]);
        assert!(rows[0].empty_denominator);
        assert_eq!(retained_usage(&[]), Err(Error::EmptyLog));
    }

    #[test]
    fn tasks_are_valid_and_deterministic() {
        let spec = StreamSpec::default();
        let gen = TaskGenerator::new(&spec).unwrap();
        let a = gen.task(&mut Rng::new(1), 2, 0);
        let b = gen.task(&mut Rng::new(1), 2, 0);
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.required.len(), spec.requirements_per_task);
    }

    #[test]
    fn spec_validation() {
        let mut s = StreamSpec::default();
        s.stages.clear();
        assert!(s.validate().is_err());
        let s = StreamSpec {
            requirements_per_task: 50,
            ..StreamSpec::default()
        };
        assert!(s.validate().is_err());
        let s = StreamSpec {
            domain_centers: vec![Vector::from(vec![1.0; 16])],
            ..StreamSpec::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_domain_stream_improves() {
        let spec = StreamSpec {
            stages: vec![0],
            tasks_per_stage: 400,
            ..StreamSpec::default()
        };
        let out = run_stream(&spec, &PolicyConfig::skill_preset(Mode::Vanilla), 30).unwrap();
        let rates = chunk_success_rates(&out.events, 100).unwrap();
        for w in rates.windows(2) {
            assert!(w[1] >= w[0] - 0.05, "{rates:?}");
        }
        let rows = retained_usage(&out.stages).unwrap();
        assert_eq!(rows[0].shares, vec![1.0]);
    }

    #[test]
    fn stream_is_deterministic() {
        let spec = StreamSpec {
            tasks_per_stage: 100,
            ..StreamSpec::default()
        };
        let p = PolicyConfig::skill_preset(Mode::Cpe);
        assert_eq!(run_stream(&spec, &p, 30).unwrap(), run_stream(&spec, &p, 30).unwrap());
    }
}
