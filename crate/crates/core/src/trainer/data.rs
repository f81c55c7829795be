use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Every class mean takes one step of length `shift_magnitude` in a fresh
    /// random direction per stage.
    MeanDrift,
    /// Class means rotate by `stage_index * shift_magnitude` radians in a fixed
    /// random plane.
    Rotation,
}

/// Gaussian class clusters whose means move with the stage index.
///
/// Class directions, drift directions and the sample noise depend only on
/// `seed`, so stages of one sequence share the same underlying task and differ
/// only by the shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub dim: usize,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub stage_index: usize,
    pub shift_kind: ShiftKind,
    pub shift_magnitude: f64,
    pub class_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2");
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be >= 1");
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be > 0");
        }
        if !self.shift_magnitude.is_finite() || !self.class_separation.is_finite() {
            return bad("shift_magnitude and class_separation must be finite");
        }
        if self.shift_kind == ShiftKind::Rotation && self.dim < 2 {
            return bad("rotation needs dim >= 2");
        }
        Ok(())
    }

    /// Class means before noise.
    pub fn class_means(&self) -> Result<Vec<Vector>> {
        self.validate()?;
        let root = Rng::new(self.seed);
        let mut dirs = root.substream("class_directions");
        let mut means: Vec<Vector> = (0..self.n_classes)
            .map(|_| dirs.unit_vector(self.dim).scaled(self.class_separation))
            .collect();
        match self.shift_kind {
            ShiftKind::MeanDrift => {
                for k in 1..=self.stage_index {
                    let mut drift = root.substream_indexed("drift", k as u64);
                    for m in means.iter_mut() {
                        let v = drift.unit_vector(self.dim);
                        *m = m.add_scaled(self.shift_magnitude, &v)?;
                    }
                }
            }
            ShiftKind::Rotation => {
                let mut plane = root.substream("rotation_plane");
                let a = plane.unit_vector(self.dim);
                let b = loop {
                    let v = plane.normal_vector(self.dim);
                    let v = v.add_scaled(-v.dot(&a), &a)?;
                    if let Some(u) = v.normalized() {
                        break u;
                    }
                };
                let angle = self.stage_index as f64 * self.shift_magnitude;
                let (s, c) = angle.sin_cos();
                for m in means.iter_mut() {
                    let (xa, xb) = (m.dot(&a), m.dot(&b));
                    let (ra, rb) = (c * xa - s * xb, s * xa + c * xb);
                    *m = m.add_scaled(ra - xa, &a)?.add_scaled(rb - xb, &b)?;
                }
            }
        }
        Ok(means)
    }
}

/// Row-major labeled examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    n_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, n_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                found: features.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidSpec(format!(
                "label {y} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            dim,
            n_classes,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// One row per example: `x0,…,x{d-1},label`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim)
            .map(|j| format!("x{j}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            for x in self.features(i) {
                write!(w, "{x:.16e},")?;
            }
            writeln!(w, "{}", self.label(i))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
}

fn sample_split(
    spec: &SyntheticTaskSpec,
    means: &[Vector],
    mut rng: Rng,
    n: usize,
) -> Result<Dataset> {
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % spec.n_classes;
        for &m in means[y].iter() {
            features.push(m + spec.noise_std * rng.normal());
        }
        labels.push(y);
    }
    Dataset::new(spec.dim, spec.n_classes, features, labels)
}

/// Generates balanced train and test splits for one stage.
pub fn gen_task(spec: &SyntheticTaskSpec) -> Result<TaskData> {
    let means = spec.class_means()?;
    let root = Rng::new(spec.seed);
    Ok(TaskData {
        train: sample_split(spec, &means, root.substream("train"), spec.n_train)?,
        test: sample_split(spec, &means, root.substream("test"), spec.n_test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(stage: usize, shift: f64) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            dim: 6,
            n_classes: 3,
            n_train: 30,
            n_test: 12,
            stage_index: stage,
            shift_kind: ShiftKind::MeanDrift,
            shift_magnitude: shift,
            class_separation: 3.0,
            noise_std: 0.5,
            seed: 42,
        }
    }

    #[test]
    fn zero_shift_stages_identical() {
        assert_eq!(gen_task(&spec(0, 0.0)).unwrap(), gen_task(&spec(1, 0.0)).unwrap());
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_task(&spec(2, 1.0)).unwrap(), gen_task(&spec(2, 1.0)).unwrap());
    }

    #[test]
    fn drift_displacement_has_requested_norm() {
        let m0 = spec(0, 2.0).class_means().unwrap();
        let m1 = spec(1, 2.0).class_means().unwrap();
        for (a, b) in m0.iter().zip(&m1) {
            assert!((b.sub(a).unwrap().norm() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_preserves_norms() {
        let mut s = spec(0, 0.7);
        s.shift_kind = ShiftKind::Rotation;
        let m0 = s.class_means().unwrap();
        s.stage_index = 2;
        let m2 = s.class_means().unwrap();
        for (a, b) in m0.iter().zip(&m2) {
            assert!((a.norm() - b.norm()).abs() < 1e-9);
            assert!(a.sub(b).unwrap().norm() > 1e-3);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(0, 0.0);
        s.noise_std = 0.0;
        assert!(matches!(gen_task(&s), Err(Error::InvalidSpec(_))));
        let mut s = spec(0, 0.0);
        s.n_classes = 1;
        assert!(gen_task(&s).is_err());
        let mut s = spec(0, 0.0);
        s.n_test = 0;
        assert!(gen_task(&s).is_err());
    }

    #[test]
    fn csv_dump_has_one_row_per_example() {
        let d = gen_task(&spec(0, 0.0)).unwrap().train;
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), d.len() + 1);
        assert!(text.starts_with("x0,x1,x2,x3,x4,x5,label"));
    }
}
