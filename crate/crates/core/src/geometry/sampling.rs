use serde::{Deserialize, Serialize};

use super::{anchor_state, retained_hessian_and_grad, QuadraticTask, StageEnsemble};
use crate::error::{Error, Result};
use crate::numerics::{sample_psd, sym_eigen, Rng, SymMatrix, Vector};

/// Where the new-task gradient at the anchor comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    /// `∇L_t(anchor)` of a random new quadratic task with Hessian `H_t`.
    NewTask,
    /// Standard Gaussian vector.
    Random,
    /// Top eigenvector of the retained Hessian, scaled to norm `√dim`.
    TopEigvec,
}

/// Ranges for random geometry instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceConfig {
    pub dim_min: usize,
    pub dim_max: usize,
    pub tasks_min: usize,
    pub tasks_max: usize,
    pub uniform_weights: bool,
    pub retained_eig: [f64; 2],
    pub new_task_eig: [f64; 2],
    pub metric_eig: [f64; 2],
    pub minimizer_scale: f64,
    pub gradient: GradientSource,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            dim_min: 2,
            dim_max: 32,
            tasks_min: 1,
            tasks_max: 3,
            uniform_weights: true,
            retained_eig: [0.1, 5.0],
            new_task_eig: [0.0, 5.0],
            metric_eig: [0.2, 5.0],
            minimizer_scale: 1.0,
            gradient: GradientSource::NewTask,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_min == 0 || self.dim_min > self.dim_max {
            return Err(Error::InvalidRange(format!(
                "dim range [{}, {}]",
                self.dim_min, self.dim_max
            )));
        }
        if self.tasks_min == 0 || self.tasks_min > self.tasks_max {
            return Err(Error::InvalidRange(format!(
                "task count range [{}, {}]",
                self.tasks_min, self.tasks_max
            )));
        }
        if self.retained_eig[0] <= 0.0 || self.metric_eig[0] <= 0.0 {
            return Err(Error::InvalidRange(
                "retained and metric spectra must be bounded away from zero".into(),
            ));
        }
        Ok(())
    }
}

/// A retained ensemble plus everything needed to run either update rule.
#[derive(Debug, Clone)]
pub struct GeometryInstance {
    pub ensemble: StageEnsemble,
    pub anchor: Vector,
    pub retained_hessian: SymMatrix,
    pub gradient: Vector,
    pub new_task_hessian: SymMatrix,
    pub metric: SymMatrix,
}

impl GeometryInstance {
    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn sample(rng: &mut Rng, cfg: &InstanceConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = cfg.dim_min + rng.below(cfg.dim_max - cfg.dim_min + 1);
        let n_tasks = cfg.tasks_min + rng.below(cfg.tasks_max - cfg.tasks_min + 1);
        let [lo, hi] = cfg.retained_eig;
        let tasks = (0..n_tasks)
            .map(|_| {
                let h = sample_psd(rng, dim, lo, hi)?;
                let m = rng.normal_vector(dim).scaled(cfg.minimizer_scale);
                let bias = rng.uniform();
                QuadraticTask::new(h, m, bias)
            })
            .collect::<Result<Vec<_>>>()?;
        let ensemble = if cfg.uniform_weights {
            StageEnsemble::uniform(tasks)?
        } else {
            let raw: Vec<f64> = (0..n_tasks).map(|_| rng.uniform_in(0.1, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            // pin the sum to exactly one
            let rest: f64 = w[1..].iter().sum();
            w[0] = 1.0 - rest;
            StageEnsemble::new(tasks, w)?
        };
        let anchor = anchor_state(&ensemble)?;
        let (retained_hessian, _) = retained_hessian_and_grad(&ensemble, &anchor)?;
        let [lo, hi] = cfg.new_task_eig;
        let new_task_hessian = sample_psd(rng, dim, lo, hi)?;
        let [lo, hi] = cfg.metric_eig;
        let metric = sample_psd(rng, dim, lo, hi)?;
        let gradient = match cfg.gradient {
            GradientSource::NewTask => {
                let target = rng.normal_vector(dim).scaled(cfg.minimizer_scale);
                new_task_hessian.mul_vec(&anchor.sub(&target)?)?
            }
            GradientSource::Random => rng.normal_vector(dim),
            GradientSource::TopEigvec => {
                let e = sym_eigen(&retained_hessian);
                e.vector(dim - 1).scaled((dim as f64).sqrt())
            }
        };
        Ok(Self {
            ensemble,
            anchor,
            retained_hessian,
            gradient,
            new_task_hessian,
            metric,
        })
    }
}
