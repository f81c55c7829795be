use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{Rng, Vector};

/// Regularization strength used for LoRA-scale Fisher magnitudes. Kept as a
/// labeled reference; the logistic learner defaults to [`TrainConfig::default`].
pub const REFERENCE_LAMBDA_EWC: f64 = 10_000.0;

/// Multinomial logistic regression weights, one row of `dim + 1` per class
/// with the bias last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub dim: usize,
    pub n_classes: usize,
    pub theta: Vector,
}

impl LearnerState {
    pub fn zeros(dim: usize, n_classes: usize) -> Self {
        Self {
            dim,
            n_classes,
            theta: Vector::zeros(n_classes * (dim + 1)),
        }
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    fn row(&self, c: usize) -> &[f64] {
        let w = self.dim + 1;
        &self.theta[c * w..(c + 1) * w]
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let row = self.row(c);
                row[..self.dim].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + row[self.dim]
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        let mut best = 0;
        for c in 1..s.len() {
            if s[c] > s[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = (0..data.len())
            .filter(|&i| self.predict(data.features(i)) == data.label(i))
            .count();
        correct as f64 / data.len() as f64
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        check_dim(self.dim, data.dim())?;
        check_dim(self.n_classes, data.n_classes())
    }
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Diagonal importance and the anchor it pulls toward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherState {
    pub importance: Vector,
    pub anchor: Vector,
    pub stages_accumulated: usize,
}

impl FisherState {
    pub fn empty(n_params: usize) -> Self {
        Self {
            importance: Vector::zeros(n_params),
            anchor: Vector::zeros(n_params),
            stages_accumulated: 0,
        }
    }

    /// `½ Σ F_i (θ_i − θ*_i)²`.
    pub fn penalty(&self, theta: &[f64]) -> f64 {
        0.5 * self
            .importance
            .iter()
            .zip(theta.iter().zip(self.anchor.iter()))
            .map(|(f, (t, a))| f * (t - a) * (t - a))
            .sum::<f64>()
    }
}

/// Mean cross-entropy over `batch` plus `(λ/2) Σ F_i (θ_i − θ*_i)²`, with the
/// exact gradient of the sum.
pub fn loss_and_grad(
    state: &LearnerState,
    data: &Dataset,
    batch: &[usize],
    fisher: &FisherState,
    lambda_ewc: f64,
) -> Result<(f64, Vector)> {
    state.check_data(data)?;
    check_dim(state.n_params(), fisher.importance.len())?;
    check_dim(state.n_params(), fisher.anchor.len())?;
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let w = state.dim + 1;
    let mut grad = vec![0.0; state.n_params()];
    let mut loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;
    for &i in batch {
        let x = data.features(i);
        let y = data.label(i);
        let s = state.scores(x);
        let lse = log_sum_exp(&s);
        loss += lse - s[y];
        for c in 0..state.n_classes {
            let p = (s[c] - lse).exp();
            let r = (p - if c == y { 1.0 } else { 0.0 }) * inv_b;
            let row = &mut grad[c * w..(c + 1) * w];
            for (g, xi) in row[..state.dim].iter_mut().zip(x) {
                *g += r * xi;
            }
            row[state.dim] += r;
        }
    }
    loss *= inv_b;
    if lambda_ewc != 0.0 {
        loss += lambda_ewc * fisher.penalty(&state.theta);
        for (k, g) in grad.iter_mut().enumerate() {
            *g += lambda_ewc * fisher.importance[k] * (state.theta[k] - fisher.anchor[k]);
        }
    }
    Ok((loss, Vector::from(grad)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_ewc: f64,
    pub gamma_decay: f64,
    pub fisher_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 10,
            batch_size: 16,
            lambda_ewc: 2.0,
            gamma_decay: 0.9,
            fisher_samples: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.fisher_samples == 0 {
            return bad("epochs, batch_size and fisher_samples must be >= 1");
        }
        if !(self.lambda_ewc >= 0.0 && self.lambda_ewc.is_finite()) {
            return bad("lambda_ewc must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.gamma_decay) {
            return bad("gamma_decay must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Minibatch SGD over `config.epochs` shuffled passes.
///
/// The cross-entropy part takes an explicit gradient step; the separable
/// quadratic penalty is applied as its exact proximal map
/// `θ_i ← (θ_i + η λ F_i θ*_i) / (1 + η λ F_i)`, which minimizes the same
/// objective and stays stable for any λ.
pub fn train_stage(
    state: &LearnerState,
    data: &Dataset,
    fisher: &FisherState,
    config: &TrainConfig,
) -> Result<LearnerState> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    state.check_data(data)?;
    let no_penalty = FisherState::empty(state.n_params());
    let lr = config.learning_rate;
    let penalized = config.lambda_ewc != 0.0;
    let shrink: Vec<f64> = if penalized {
        fisher
            .importance
            .iter()
            .map(|f| 1.0 / (1.0 + lr * config.lambda_ewc * f))
            .collect()
    } else {
        Vec::new()
    };

    let mut rng = Rng::new(config.seed).substream("shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut next = state.clone();
    let mut step = 0;
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = loss_and_grad(&next, data, batch, &no_penalty, 0.0)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::DivergenceDetected { step, loss });
            }
            for (t, g) in next.theta.iter_mut().zip(grad.iter()) {
                *t -= lr * g;
            }
            if penalized {
                for k in 0..next.theta.len() {
                    let pull = lr * config.lambda_ewc * fisher.importance[k] * fisher.anchor[k];
                    next.theta[k] = (next.theta[k] + pull) * shrink[k];
                }
            }
            if !next.theta.is_finite() {
                return Err(Error::DivergenceDetected { step, loss: f64::NAN });
            }
            step += 1;
        }
    }
    Ok(next)
}

/// Per-sample squared log-likelihood gradients at labels drawn from the
/// model's own predictive distribution. Examples are drawn with replacement,
/// so a longer run shares its prefix with a shorter one.
pub fn fisher_sample_squares(
    state: &LearnerState,
    data: &Dataset,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Vec<Vector>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    state.check_data(data)?;
    let w = state.dim + 1;
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let i = rng.below(data.len());
        let x = data.features(i);
        let p = state.probabilities(x);
        let y = rng.categorical(&p);
        let mut sq = vec![0.0; state.n_params()];
        for c in 0..state.n_classes {
            let r = if c == y { 1.0 } else { 0.0 } - p[c];
            let row = &mut sq[c * w..(c + 1) * w];
            for (s, xi) in row[..state.dim].iter_mut().zip(x) {
                *s = (r * xi) * (r * xi);
            }
            row[state.dim] = r * r;
        }
        out.push(Vector::from(sq));
    }
    Ok(out)
}

/// Diagonal Fisher estimate: the mean of [`fisher_sample_squares`].
pub fn estimate_fisher(
    state: &LearnerState,
    data: &Dataset,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Vector> {
    let samples = fisher_sample_squares(state, data, n_samples, rng)?;
    let mut mean = Vector::zeros(state.n_params());
    for s in &samples {
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    Ok(mean.scaled(1.0 / n_samples as f64))
}

/// `F ← γ F_old + F_new`, anchor reset to `new_anchor`.
pub fn accumulate_fisher(
    fisher: &FisherState,
    new_importance: &[f64],
    new_anchor: &[f64],
    gamma: f64,
) -> Result<FisherState> {
    check_dim(fisher.importance.len(), new_importance.len())?;
    check_dim(fisher.importance.len(), new_anchor.len())?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
    }
    if new_importance.iter().any(|&f| !(f >= 0.0)) {
        return Err(Error::InvalidArgument("importance must be >= 0".into()));
    }
    Ok(FisherState {
        importance: fisher
            .importance
            .iter()
            .zip(new_importance)
            .map(|(old, new)| gamma * old + new)
            .collect(),
        anchor: Vector::from(new_anchor.to_vec()),
        stages_accumulated: fisher.stages_accumulated + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_example(x: f64) -> Dataset {
        Dataset::new(1, 2, vec![x], vec![0]).unwrap()
    }

    #[test]
    fn zero_theta_two_classes_loss_is_ln2() {
        let s = LearnerState::zeros(1, 2);
        let f = FisherState::empty(s.n_params());
        let (loss, _) = loss_and_grad(&s, &one_example(1.5), &[0], &f, 0.0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn anchored_penalty_vanishes() {
        let mut s = LearnerState::zeros(1, 2);
        s.theta = Vector::from(vec![0.3, -0.2, 0.1, 0.4]);
        let f = FisherState {
            importance: Vector::from(vec![1.0, 2.0, 3.0, 4.0]),
            anchor: s.theta.clone(),
            stages_accumulated: 1,
        };
        let d = one_example(0.7);
        let (l0, g0) = loss_and_grad(&s, &d, &[0], &f, 0.0).unwrap();
        let (l1, g1) = loss_and_grad(&s, &d, &[0], &f, 50.0).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(g0, g1);
    }

    #[test]
    fn predict_tie_goes_to_lowest_index() {
        let s = LearnerState::zeros(2, 4);
        assert_eq!(s.predict(&[1.0, -1.0]), 0);
    }

    #[test]
    fn accumulate_rules() {
        let f0 = FisherState::empty(3);
        let f1 = accumulate_fisher(&f0, &[1.0, 2.0, 3.0], &[0.5; 3], 0.9).unwrap();
        assert_eq!(f1.importance.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(f1.stages_accumulated, 1);

        let ones = FisherState {
            importance: Vector::from(vec![1.0; 3]),
            anchor: Vector::zeros(3),
            stages_accumulated: 1,
        };
        let f2 = accumulate_fisher(&ones, &[0.0; 3], &[1.0; 3], 0.9).unwrap();
        assert_eq!(f2.importance.as_slice(), &[0.9; 3]);
        assert_eq!(f2.anchor.as_slice(), &[1.0; 3]);

        let f3 = accumulate_fisher(&ones, &[0.25; 3], &[1.0; 3], 0.0).unwrap();
        assert_eq!(f3.importance.as_slice(), &[0.25; 3]);

        assert!(accumulate_fisher(&ones, &[0.0; 2], &[1.0; 3], 0.5).is_err());
        assert!(accumulate_fisher(&ones, &[0.0; 3], &[1.0; 3], 1.5).is_err());
    }

    #[test]
    fn single_sample_fisher_is_squared_gradient() {
        // θ = 0 gives p = (½, ½); whichever label is drawn, the gradient of
        // log p_y is ±½·[x, 1] on each class row.
        let s = LearnerState::zeros(1, 2);
        let x = 1.7;
        let f = estimate_fisher(&s, &one_example(x), 1, &mut Rng::new(9)).unwrap();
        let g = [0.5 * x, 0.5, -0.5 * x, -0.5];
        for (fi, gi) in f.iter().zip(g) {
            assert!((fi - gi * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_model_has_zero_fisher() {
        let mut s = LearnerState::zeros(1, 2);
        s.theta = Vector::from(vec![0.0, 1000.0, 0.0, 0.0]);
        let d = Dataset::new(1, 2, vec![0.0; 5], vec![0; 5]).unwrap();
        let f = estimate_fisher(&s, &d, 20, &mut Rng::new(1)).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fisher_errors() {
        let s = LearnerState::zeros(1, 2);
        let empty = Dataset::new(1, 2, vec![], vec![]).unwrap();
        assert_eq!(
            estimate_fisher(&s, &empty, 3, &mut Rng::new(0)),
            Err(Error::EmptyDataset)
        );
    }

    #[test]
    fn empty_dataset_rejected_by_training() {
        let s = LearnerState::zeros(1, 2);
        let empty = Dataset::new(1, 2, vec![], vec![]).unwrap();
        let f = FisherState::empty(s.n_params());
        assert_eq!(
            train_stage(&s, &empty, &f, &TrainConfig::default()),
            Err(Error::EmptyDataset)
        );
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let s = LearnerState::zeros(1, 2);
        let d = Dataset::new(1, 2, vec![1e200, -1e200], vec![0, 1]).unwrap();
        let f = FisherState::empty(s.n_params());
        let cfg = TrainConfig {
            learning_rate: 1e200,
            ..Default::default()
        };
        assert!(matches!(
            train_stage(&s, &d, &f, &cfg),
            Err(Error::DivergenceDetected { .. })
        ));
    }
}
