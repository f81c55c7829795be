use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::vector::cosine;
use crate::numerics::Vector;
use crate::Mode;

pub const UNIT_NORM_TOL: f64 = 1e-9;

pub(crate) fn check_unit(v: &[f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() <= UNIT_NORM_TOL {
        Ok(())
    } else {
        Err(Error::InvalidCandidate { norm })
    }
}

/// One capability in the bank: an embedding plus usage statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillEntry {
    pub id: u64,
    pub embedding: Vector,
    pub origin_stage: usize,
    pub use_count: u64,
    pub success_count: u64,
    pub evidence_count: u64,
    pub protected: bool,
    pub merged_from: u64,
}

impl SkillEntry {
    pub fn new(id: u64, embedding: Vector, origin_stage: usize) -> Result<Self> {
        check_unit(&embedding)?;
        Ok(Self {
            id,
            embedding,
            origin_stage,
            use_count: 0,
            success_count: 0,
            evidence_count: 0,
            protected: false,
            merged_from: 1,
        })
    }

    pub fn cosine(&self, query: &[f64]) -> f64 {
        cosine(&self.embedding, query)
    }
}

/// Combines two entries into one.
///
/// The embedding is the normalized `merged_from`-weighted sum, counts add up,
/// the older origin and the smaller id survive, and protection is sticky.
pub fn merge(a: &SkillEntry, b: &SkillEntry) -> Result<SkillEntry> {
    check_unit(&a.embedding)?;
    check_unit(&b.embedding)?;
    let c = cosine(&a.embedding, &b.embedding);
    if c <= -1.0 + 1e-9 {
        return Err(Error::DegenerateMerge { cosine: c });
    }
    let (wa, wb) = (a.merged_from as f64, b.merged_from as f64);
    let sum: Vector = a
        .embedding
        .iter()
        .zip(b.embedding.iter())
        .map(|(x, y)| x * wa + y * wb)
        .collect();
    let embedding = sum
        .normalized()
        .ok_or(Error::DegenerateMerge { cosine: c })?;
    Ok(SkillEntry {
        id: a.id.min(b.id),
        embedding,
        origin_stage: a.origin_stage.min(b.origin_stage),
        use_count: a.use_count + b.use_count,
        success_count: a.success_count + b.success_count,
        evidence_count: a.evidence_count + b.evidence_count,
        protected: a.protected || b.protected,
        merged_from: a.merged_from + b.merged_from,
    })
}

/// Repository update policy. The merge, protection and evidence fields are
/// present exactly when `kind` is [`Mode::Cpe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: Mode,
    pub retrieval_k: usize,
    pub coverage_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protection_min_success: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_threshold: Option<u64>,
}

/// Skill bank retrieval budget.
pub const DEFAULT_RETRIEVAL_K: usize = 5;
/// Skill bank capacity.
pub const DEFAULT_CAPACITY: usize = 30;

impl PolicyConfig {
    pub fn vanilla(retrieval_k: usize, coverage_threshold: f64) -> Self {
        Self {
            kind: Mode::Vanilla,
            retrieval_k,
            coverage_threshold,
            merge_threshold: None,
            protection_min_success: None,
            evidence_threshold: None,
        }
    }

    pub fn cpe(
        retrieval_k: usize,
        coverage_threshold: f64,
        merge_threshold: f64,
        protection_min_success: u64,
        evidence_threshold: u64,
    ) -> Self {
        Self {
            kind: Mode::Cpe,
            retrieval_k,
            coverage_threshold,
            merge_threshold: Some(merge_threshold),
            protection_min_success: Some(protection_min_success),
            evidence_threshold: Some(evidence_threshold),
        }
    }

    /// Skill-channel defaults.
    pub fn skill_preset(kind: Mode) -> Self {
        match kind {
            Mode::Vanilla => Self::vanilla(DEFAULT_RETRIEVAL_K, 0.85),
            Mode::Cpe => Self::cpe(DEFAULT_RETRIEVAL_K, 0.85, 0.95, 5, 3),
        }
    }

    /// Same mechanism family with thresholds for the memory channel.
    pub fn memory_preset(kind: Mode) -> Self {
        match kind {
            Mode::Vanilla => Self::vanilla(DEFAULT_RETRIEVAL_K, 0.85),
            Mode::Cpe => Self::cpe(DEFAULT_RETRIEVAL_K, 0.85, 0.95, 3, 2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.retrieval_k == 0 {
            return bad("retrieval_k must be >= 1".into());
        }
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        if !in_unit(self.coverage_threshold) {
            return bad(format!(
                "coverage_threshold {} outside (0, 1)",
                self.coverage_threshold
            ));
        }
        let cpe_fields = [
            self.merge_threshold.is_some(),
            self.protection_min_success.is_some(),
            self.evidence_threshold.is_some(),
        ];
        match self.kind {
            Mode::Vanilla => {
                if cpe_fields.iter().any(|&p| p) {
                    return bad("vanilla policy must not set cpe-only fields".into());
                }
            }
            Mode::Cpe => {
                if !cpe_fields.iter().all(|&p| p) {
                    return bad(
                        "cpe policy needs merge_threshold, protection_min_success and evidence_threshold"
                            .into(),
                    );
                }
                let m = self.merge_threshold.unwrap_or_default();
                if !in_unit(m) {
                    return bad(format!("merge_threshold {m} outside (0, 1)"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u64, e: Vec<f64>) -> SkillEntry {
        SkillEntry::new(id, Vector::from(e), 0).unwrap()
    }

    #[test]
    fn merge_identical_sums_counts() {
        let mut a = entry(1, vec![1.0, 0.0]);
        a.use_count = 3;
        a.success_count = 2;
        let mut b = entry(4, vec![1.0, 0.0]);
        b.use_count = 5;
        b.evidence_count = 7;
        let m = merge(&a, &b).unwrap();
        assert_eq!(m.embedding.as_slice(), &[1.0, 0.0]);
        assert_eq!((m.use_count, m.success_count, m.evidence_count), (8, 2, 7));
        assert_eq!((m.id, m.merged_from), (1, 2));
    }

    #[test]
    fn merge_orthogonal_is_diagonal() {
        let m = merge(&entry(2, vec![1.0, 0.0]), &entry(3, vec![0.0, 1.0])).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((m.embedding[0] - h).abs() < 1e-15 && (m.embedding[1] - h).abs() < 1e-15);
    }

    #[test]
    fn merge_weights_by_constituents() {
        let mut a = entry(2, vec![1.0, 0.0]);
        a.merged_from = 3;
        let m = merge(&a, &entry(3, vec![0.0, 1.0])).unwrap();
        let n = 10f64.sqrt();
        assert!((m.embedding[0] - 3.0 / n).abs() < 1e-15);
    }

    #[test]
    fn merge_is_commutative() {
        let mut a = entry(9, vec![0.6, 0.8]);
        a.protected = true;
        a.origin_stage = 2;
        let b = entry(5, vec![0.8, -0.6]);
        assert_eq!(merge(&a, &b).unwrap(), merge(&b, &a).unwrap());
        let m = merge(&a, &b).unwrap();
        assert!(m.protected);
        assert_eq!(m.origin_stage, 0);
    }

    #[test]
    fn antipodal_merge_rejected() {
        assert!(matches!(
            merge(&entry(1, vec![1.0, 0.0]), &entry(2, vec![-1.0, 0.0])),
            Err(Error::DegenerateMerge { .. })
        ));
    }

    #[test]
    fn entries_must_be_unit_norm() {
        assert!(matches!(
            SkillEntry::new(0, Vector::from(vec![1.0, 1.0]), 0),
            Err(Error::InvalidCandidate { .. })
        ));
    }

    #[test]
    fn policy_field_presence() {
        PolicyConfig::skill_preset(Mode::Vanilla).validate().unwrap();
        PolicyConfig::skill_preset(Mode::Cpe).validate().unwrap();
        let mut p = PolicyConfig::skill_preset(Mode::Vanilla);
        p.merge_threshold = Some(0.9);
        assert!(p.validate().is_err());
        let mut p = PolicyConfig::skill_preset(Mode::Cpe);
        p.evidence_threshold = None;
        assert!(p.validate().is_err());
        let mut p = PolicyConfig::skill_preset(Mode::Cpe);
        p.coverage_threshold = 1.0;
        assert!(p.validate().is_err());
    }
}
