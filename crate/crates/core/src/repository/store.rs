use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::entry::{check_unit, merge, PolicyConfig, SkillEntry};
use super::TaskInstance;
use crate::error::{Error, Result};
use crate::numerics::vector::cosine;
use crate::numerics::{Rng, Vector};
use crate::Mode;

/// A retrieved entry and its similarity to the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub id: u64,
    pub cosine: f64,
}

/// What [`Repository::admit`] did with a candidate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdmissionReport {
    /// The candidate's content is in the repository (appended or merged).
    pub admitted: bool,
    /// Existing entry the candidate was merged into.
    pub merged_with: Option<u64>,
    /// Pair `(kept, absorbed)` merged to release capacity.
    pub pair_merged: Option<(u64, u64)>,
    pub evicted_id: Option<u64>,
    /// No capacity could be released; the candidate was dropped.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub success: bool,
    pub covered_fraction: f64,
    pub retrieved: Vec<u64>,
    pub synthesized: Option<SkillEntry>,
    pub admission: Option<AdmissionReport>,
}

/// Bounded-capacity capability bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repository {
    entries: Vec<SkillEntry>,
    capacity: usize,
    policy: PolicyConfig,
    next_id: u64,
}

fn by_similarity(a: &Retrieved, b: &Retrieved) -> Ordering {
    b.cosine.total_cmp(&a.cosine).then(a.id.cmp(&b.id))
}

impl Repository {
    pub fn new(capacity: usize, policy: PolicyConfig) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("capacity must be >= 1".into()));
        }
        policy.validate()?;
        Ok(Self {
            entries: Vec::new(),
            capacity,
            policy,
            next_id: 0,
        })
    }

    pub fn entries(&self) -> &[SkillEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }

    pub fn get(&self, id: u64) -> Option<&SkillEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    fn position(&self, id: u64) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    /// Mints a fresh entry with the next unused id.
    pub fn new_candidate(&mut self, embedding: Vector, origin_stage: usize) -> Result<SkillEntry> {
        let e = SkillEntry::new(self.next_id, embedding, origin_stage)?;
        self.next_id += 1;
        Ok(e)
    }

    /// Top-`k` by cosine (ties to the lower id) without touching usage.
    pub fn rank(&self, query: &[f64], k: usize) -> Vec<Retrieved> {
        let mut scored: Vec<Retrieved> = self
            .entries
            .iter()
            .map(|e| Retrieved {
                id: e.id,
                cosine: e.cosine(query),
            })
            .collect();
        scored.sort_by(by_similarity);
        scored.truncate(k);
        scored
    }

    /// [`rank`](Self::rank), then counts one use for every returned entry.
    pub fn retrieve(&mut self, query: &[f64], k: usize) -> Vec<Retrieved> {
        let hits = self.rank(query, k);
        for h in &hits {
            if let Some(i) = self.position(h.id) {
                self.entries[i].use_count += 1;
            }
        }
        hits
    }

    fn lfu_victim(&self, exclude: u64, unprotected_only: bool) -> Option<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.id != exclude && !(unprotected_only && e.protected))
            .min_by_key(|(_, e)| (e.use_count, e.origin_stage, e.id))
            .map(|(i, _)| i)
    }

    fn closest_unprotected_pair(&self, threshold: f64) -> Option<(usize, usize)> {
        let mut best: Option<(f64, u64, u64, usize, usize)> = None;
        for (i, a) in self.entries.iter().enumerate() {
            if a.protected {
                continue;
            }
            for (j, b) in self.entries.iter().enumerate().skip(i + 1) {
                if b.protected {
                    continue;
                }
                let c = cosine(&a.embedding, &b.embedding);
                if c < threshold {
                    continue;
                }
                let (lo, hi) = (a.id.min(b.id), a.id.max(b.id));
                let better = match best {
                    None => true,
                    Some((bc, blo, bhi, _, _)) => c > bc || (c == bc && (lo, hi) < (blo, bhi)),
                };
                if better {
                    best = Some((c, lo, hi, i, j));
                }
            }
        }
        best.map(|(_, _, _, i, j)| (i, j))
    }

    /// Adds a candidate, releasing capacity according to the policy.
    ///
    /// The candidate itself is never the eviction victim: it is admitted and
    /// room is made among the entries already present.
    pub fn admit(&mut self, candidate: SkillEntry) -> Result<AdmissionReport> {
        check_unit(&candidate.embedding)?;
        if self.entries.iter().any(|e| e.id == candidate.id) {
            return Err(Error::InvalidArgument(format!(
                "id {} already present",
                candidate.id
            )));
        }
        self.next_id = self.next_id.max(candidate.id + 1);
        let mut report = AdmissionReport::default();
        match self.policy.kind {
            Mode::Vanilla => {
                let cid = candidate.id;
                self.entries.push(candidate);
                report.admitted = true;
                if self.entries.len() > self.capacity {
                    if let Some(i) = self.lfu_victim(cid, false) {
                        report.evicted_id = Some(self.entries.remove(i).id);
                    }
                }
            }
            Mode::Cpe => {
                let threshold = self.policy.merge_threshold.unwrap_or(1.0);
                let nearest = self.rank(&candidate.embedding, 1).into_iter().next();
                if let Some(hit) = nearest.filter(|h| h.cosine >= threshold) {
                    let i = self.position(hit.id).expect("ranked entry exists");
                    self.entries[i] = merge(&self.entries[i], &candidate)?;
                    report.admitted = true;
                    report.merged_with = Some(hit.id);
                    return Ok(report);
                }
                let cid = candidate.id;
                self.entries.push(candidate);
                report.admitted = true;
                if self.entries.len() > self.capacity {
                    if let Some((i, j)) = self.closest_unprotected_pair(threshold) {
                        let merged = merge(&self.entries[i], &self.entries[j])?;
                        let absorbed = self.entries[i].id.max(self.entries[j].id);
                        report.pair_merged = Some((merged.id, absorbed));
                        self.entries[i] = merged;
                        self.entries.remove(j);
                    } else if let Some(i) = self.lfu_victim(cid, true) {
                        report.evicted_id = Some(self.entries.remove(i).id);
                    } else {
                        self.entries.retain(|e| e.id != cid);
                        report.admitted = false;
                        report.rejected = true;
                    }
                }
            }
        }
        Ok(report)
    }

    /// For each requirement, the best retrieved entry and its cosine.
    fn coverage(&self, task: &TaskInstance, hits: &[Retrieved]) -> Vec<Option<(u64, f64)>> {
        task.required
            .iter()
            .map(|r| {
                hits.iter()
                    .filter_map(|h| self.get(h.id).map(|e| (h.id, e.cosine(r))))
                    .min_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)))
                    .filter(|&(_, c)| c >= self.policy.coverage_threshold)
            })
            .collect()
    }

    /// Success and coverage of `task` against the current contents, without
    /// updating any statistics.
    pub fn evaluate_task(&self, task: &TaskInstance) -> (bool, f64, Vec<u64>) {
        let hits = self.rank(&task.query(), self.policy.retrieval_k);
        let cover = self.coverage(task, &hits);
        let covered = cover.iter().filter(|c| c.is_some()).count();
        (
            covered == cover.len(),
            covered as f64 / cover.len() as f64,
            hits.iter().map(|h| h.id).collect(),
        )
    }

    /// Attempts a task, crediting the entries that covered it on success and
    /// synthesizing a noisy copy of the first uncovered requirement on
    /// failure.
    pub fn step_task(
        &mut self,
        task: &TaskInstance,
        rng: &mut Rng,
        synth_noise_std: f64,
    ) -> Result<StepOutcome> {
        task.validate()?;
        let hits = self.retrieve(&task.query(), self.policy.retrieval_k);
        let cover = self.coverage(task, &hits);
        let covered = cover.iter().filter(|c| c.is_some()).count();
        let success = covered == cover.len();
        let mut outcome = StepOutcome {
            success,
            covered_fraction: covered as f64 / cover.len() as f64,
            retrieved: hits.iter().map(|h| h.id).collect(),
            synthesized: None,
            admission: None,
        };
        if success {
            let mut credited: Vec<u64> = cover.iter().flatten().map(|&(id, _)| id).collect();
            credited.sort_unstable();
            credited.dedup();
            for id in credited {
                let i = self.position(id).expect("covering entry exists");
                self.entries[i].success_count += 1;
                self.entries[i].evidence_count += 1;
            }
        } else {
            let k = cover.iter().position(|c| c.is_none()).expect("a requirement is uncovered");
            let base = &task.required[k];
            let embedding = loop {
                let noisy: Vector = base
                    .iter()
                    .map(|x| x + synth_noise_std * rng.normal())
                    .collect();
                if let Some(u) = noisy.normalized() {
                    break u;
                }
            };
            let candidate = self.new_candidate(embedding, task.stage)?;
            outcome.synthesized = Some(candidate.clone());
            outcome.admission = Some(self.admit(candidate)?);
        }
        Ok(outcome)
    }

    /// Halves every entry's use and success counts (integer floor), so LFU
    /// ranks by recent rather than lifetime retrieval frequency.
    pub fn age_usage(&mut self) {
        for e in self.entries.iter_mut() {
            e.use_count /= 2;
            e.success_count /= 2;
        }
    }

    /// Protects entries with enough verified support. Returns the ids that
    /// became protected; protection is never removed.
    pub fn apply_evidence_gating(&mut self) -> Result<Vec<u64>> {
        if self.policy.kind != Mode::Cpe {
            return Err(Error::PolicyMismatch);
        }
        let evidence = self.policy.evidence_threshold.unwrap_or(u64::MAX);
        let success = self.policy.protection_min_success.unwrap_or(u64::MAX);
        let mut newly = Vec::new();
        for e in self.entries.iter_mut() {
            if !e.protected && (e.evidence_count >= evidence || e.success_count >= success) {
                e.protected = true;
                newly.push(e.id);
            }
        }
        Ok(newly)
    }
}
