use serde::{Deserialize, Serialize};

use super::{
    accumulate_fisher, estimate_fisher, gen_task, train_stage, FisherState, LearnerState,
    SyntheticTaskSpec, TrainConfig,
};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::Mode;

/// `acc[i][j]`: test accuracy on task `i` after stage `j`, defined for `i <= j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionMatrix {
    acc: Vec<Vec<Option<f64>>>,
}

impl RetentionMatrix {
    pub fn new(n_stages: usize) -> Self {
        Self {
            acc: vec![vec![None; n_stages]; n_stages],
        }
    }

    pub fn n_stages(&self) -> usize {
        self.acc.len()
    }

    pub fn set(&mut self, task: usize, stage: usize, value: f64) -> Result<()> {
        if task > stage || stage >= self.n_stages() {
            return Err(Error::InvalidArgument(format!(
                "acc[{task}][{stage}] is outside the lower-triangular retention matrix"
            )));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!("accuracy {value} outside [0, 1]")));
        }
        self.acc[task][stage] = Some(value);
        Ok(())
    }

    pub fn get(&self, task: usize, stage: usize) -> Option<f64> {
        self.acc.get(task)?.get(stage).copied().flatten()
    }

    fn require(&self, task: usize, stage: usize) -> Result<f64> {
        self.get(task, stage)
            .ok_or(Error::IncompleteMatrix { task, stage })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingMetrics {
    pub avg_forgetting: f64,
    pub final_avg_acc: f64,
    pub per_task_forgetting: Vec<f64>,
}

/// Peak-minus-final forgetting per task. The average runs over every task
/// except the last, which has no later stage to forget in; a single-stage
/// matrix therefore averages to zero.
pub fn forgetting_metrics(matrix: &RetentionMatrix) -> Result<ForgettingMetrics> {
    let n = matrix.n_stages();
    if n == 0 {
        return Err(Error::IncompleteMatrix { task: 0, stage: 0 });
    }
    let last = n - 1;
    let mut per_task = Vec::with_capacity(n);
    let mut final_sum = 0.0;
    for i in 0..n {
        let mut peak = f64::NEG_INFINITY;
        for j in i..n {
            peak = peak.max(matrix.require(i, j)?);
        }
        let fin = matrix.require(i, last)?;
        per_task.push(peak - fin);
        final_sum += fin;
    }
    let avg_forgetting = if n > 1 {
        per_task[..last].iter().sum::<f64>() / last as f64
    } else {
        0.0
    };
    Ok(ForgettingMetrics {
        avg_forgetting,
        final_avg_acc: final_sum / n as f64,
        per_task_forgetting: per_task,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    pub retention: RetentionMatrix,
    pub final_state: LearnerState,
    pub fisher: FisherState,
}

/// Stage `s` of a shifting sequence built from `base`.
pub fn stage_specs(base: &SyntheticTaskSpec, n_stages: usize) -> Vec<SyntheticTaskSpec> {
    (0..n_stages)
        .map(|s| SyntheticTaskSpec {
            stage_index: s,
            ..base.clone()
        })
        .collect()
}

/// Trains through `specs` in order, re-evaluating every task seen so far
/// after each stage. Vanilla trains with λ = 0; cpe uses `config.lambda_ewc`
/// and refreshes the Fisher state at each stage's final parameters.
pub fn run_sequence(
    specs: &[SyntheticTaskSpec],
    config: &TrainConfig,
    mode: Mode,
) -> Result<SequenceOutcome> {
    config.validate()?;
    if specs.len() < 2 {
        return Err(Error::InvalidSpec("a sequence needs at least 2 stages".into()));
    }
    let (dim, n_classes) = (specs[0].dim, specs[0].n_classes);
    if specs.iter().any(|s| s.dim != dim || s.n_classes != n_classes) {
        return Err(Error::InvalidSpec(
            "all stages must share dim and n_classes".into(),
        ));
    }
    let tasks = specs.iter().map(gen_task).collect::<Result<Vec<_>>>()?;
    let root = Rng::new(config.seed);
    let mut state = LearnerState::zeros(dim, n_classes);
    let mut fisher = FisherState::empty(state.n_params());
    let mut retention = RetentionMatrix::new(specs.len());
    let lambda = match mode {
        Mode::Vanilla => 0.0,
        Mode::Cpe => config.lambda_ewc,
    };

    for (s, task) in tasks.iter().enumerate() {
        let stage_cfg = TrainConfig {
            lambda_ewc: lambda,
            seed: root.substream_indexed("stage", s as u64).key(),
            ..config.clone()
        };
        state = train_stage(&state, &task.train, &fisher, &stage_cfg)?;
        for (i, seen) in tasks[..=s].iter().enumerate() {
            retention.set(i, s, state.accuracy(&seen.test))?;
        }
        if mode == Mode::Cpe {
            let mut rng = root.substream_indexed("fisher", s as u64);
            let importance = estimate_fisher(&state, &task.train, config.fisher_samples, &mut rng)?;
            fisher = accumulate_fisher(&fisher, &importance, &state.theta, config.gamma_decay)?;
        }
    }
    Ok(SequenceOutcome {
        retention,
        final_state: state,
        fisher,
    })
}
