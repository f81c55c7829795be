//! Exact quadratic analysis of naive and capability-preserving updates.
//!
//! The retained objective is a convex combination of PSD quadratics, so every
//! quantity here (risk, anchor, erosion) is evaluated in closed form. On such
//! objectives the second-order expansions around the anchor have no
//! remainder, which turns the erosion identities into equalities and
//! inequalities that can be checked to near machine precision.

mod sampling;

pub use sampling::{GeometryInstance, GradientSource, InstanceConfig};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{cholesky_solve, gen_eig_max, sym_eigen, Cholesky, SymMatrix, Vector};

/// Minimum eigenvalue accepted for a PSD Hessian.
pub const PSD_TOL: f64 = -1e-10;
/// Tolerance on `Σ α_i = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// `L(R) = bias + ½ (R − m)ᵀ H (R − m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTask {
    hessian: SymMatrix,
    minimizer: Vector,
    bias: f64,
}

impl QuadraticTask {
    pub fn new(hessian: SymMatrix, minimizer: Vector, bias: f64) -> Result<Self> {
        check_dim(hessian.dim(), minimizer.len())?;
        if !hessian.is_finite() || !minimizer.is_finite() || !bias.is_finite() {
            return Err(Error::InvalidArgument("task has non-finite values".into()));
        }
        let min_eig = sym_eigen(&hessian).min();
        if min_eig < PSD_TOL {
            return Err(Error::InvalidArgument(format!(
                "task Hessian is not PSD (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self {
            hessian,
            minimizer,
            bias,
        })
    }

    pub fn hessian(&self) -> &SymMatrix {
        &self.hessian
    }

    pub fn minimizer(&self) -> &Vector {
        &self.minimizer
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn dim(&self) -> usize {
        self.minimizer.len()
    }

    pub fn loss(&self, state: &[f64]) -> Result<f64> {
        let d = Vector::from(state.to_vec()).sub(&self.minimizer)?;
        Ok(self.bias + 0.5 * self.hessian.quad_form(&d)?)
    }

    pub fn gradient(&self, state: &[f64]) -> Result<Vector> {
        let d = Vector::from(state.to_vec()).sub(&self.minimizer)?;
        self.hessian.mul_vec(&d)
    }
}

/// Weighted set of earlier tasks defining the retained risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEnsemble {
    tasks: Vec<QuadraticTask>,
    weights: Vec<f64>,
}

impl StageEnsemble {
    pub fn new(tasks: Vec<QuadraticTask>, weights: Vec<f64>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one task".into()));
        }
        check_dim(tasks.len(), weights.len())?;
        let dim = tasks[0].dim();
        for t in &tasks {
            check_dim(dim, t.dim())?;
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("ensemble weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "ensemble weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { tasks, weights })
    }

    pub fn uniform(tasks: Vec<QuadraticTask>) -> Result<Self> {
        let n = tasks.len().max(1);
        Self::new(tasks, vec![1.0 / n as f64; n])
    }

    pub fn tasks(&self) -> &[QuadraticTask] {
        &self.tasks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].dim()
    }

    fn weighted(&self) -> impl Iterator<Item = (f64, &QuadraticTask)> {
        self.weights.iter().copied().zip(&self.tasks)
    }
}

/// Retained risk `Σ α_i L_i(state)`.
pub fn retained_risk(ensemble: &StageEnsemble, state: &[f64]) -> Result<f64> {
    ensemble
        .weighted()
        .map(|(a, t)| t.loss(state).map(|l| a * l))
        .sum()
}

/// `(Σ α_i H_i, Σ α_i H_i (state − m_i))`.
pub fn retained_hessian_and_grad(
    ensemble: &StageEnsemble,
    state: &[f64],
) -> Result<(SymMatrix, Vector)> {
    check_dim(ensemble.dim(), state.len())?;
    let n = ensemble.dim();
    let mut h = SymMatrix::zeros(n);
    let mut g = Vector::zeros(n);
    for (a, t) in ensemble.weighted() {
        h = h.add_scaled(a, t.hessian())?;
        g = g.add_scaled(a, &t.gradient(state)?)?;
    }
    Ok((h, g))
}

/// Unique minimizer of the retained risk.
pub fn anchor_state(ensemble: &StageEnsemble) -> Result<Vector> {
    let n = ensemble.dim();
    let mut h = SymMatrix::zeros(n);
    let mut rhs = Vector::zeros(n);
    for (a, t) in ensemble.weighted() {
        h = h.add_scaled(a, t.hessian())?;
        rhs = rhs.add_scaled(a, &t.hessian().mul_vec(t.minimizer())?)?;
    }
    let chol = Cholesky::factor(&h).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::SingularRetainedHessian,
        other => other,
    })?;
    chol.solve(&rhs)
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be > 0, got {x}")))
    }
}

fn check_nonnegative(name: &str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be >= 0, got {x}")))
    }
}

/// `state − η g`.
pub fn naive_step(state: &[f64], g: &[f64], eta: f64) -> Result<Vector> {
    check_positive("step size", eta)?;
    Vector::from(state.to_vec()).add_scaled(-eta, g)
}

/// Penalized local step `Δ = −(H_t + λ M)⁻¹ g`.
pub fn cpe_step(g: &[f64], h_new: &SymMatrix, metric: &SymMatrix, lambda: f64) -> Result<Vector> {
    check_nonnegative("lambda", lambda)?;
    check_dim(h_new.dim(), metric.dim())?;
    let a = h_new.add_scaled(lambda, metric)?;
    Ok(cholesky_solve(&a, g)?.scaled(-1.0))
}

/// `L_<t(new) − L_<t(prev)`.
///
/// Expanded exactly as `Σ α_i [Δᵀ H_i (prev − m_i) + ½ Δᵀ H_i Δ]` with
/// `Δ = new − prev`, which is algebraically the difference of the two risks
/// but does not cancel the (possibly large) loss floors in floating point.
pub fn measure_erosion(ensemble: &StageEnsemble, prev: &[f64], new: &[f64]) -> Result<f64> {
    check_dim(ensemble.dim(), prev.len())?;
    check_dim(ensemble.dim(), new.len())?;
    let delta = Vector::from(new.to_vec()).sub(prev)?;
    let mut total = 0.0;
    for (a, t) in ensemble.weighted() {
        let offset = Vector::from(prev.to_vec()).sub(t.minimizer())?;
        let h_delta = t.hessian().mul_vec(&delta)?;
        total += a * (h_delta.dot(&offset) + 0.5 * h_delta.dot(&delta));
    }
    Ok(total)
}

/// Leading naive-step erosion `(η²/2) gᵀ H g`.
pub fn predicted_erosion(g: &[f64], h_prior: &SymMatrix, eta: f64) -> Result<f64> {
    Ok(0.5 * eta * eta * h_prior.quad_form(g)?)
}

/// Penalized-step erosion bound `(c / 2λ²) gᵀ M⁻¹ g`.
pub fn erosion_bound(g: &[f64], metric: &SymMatrix, c: f64, lambda: f64) -> Result<f64> {
    check_positive("lambda", lambda)?;
    check_nonnegative("alignment constant", c)?;
    check_dim(metric.dim(), g.len())?;
    let g_minv_g = Cholesky::factor(metric)?.inv_quad_form(g)?;
    Ok(c / (2.0 * lambda * lambda) * g_minv_g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateSpec {
    Naive {
        step_size: f64,
    },
    Cpe {
        lambda: f64,
        new_task_hessian: SymMatrix,
        preservation_metric: SymMatrix,
    },
}

/// Outcome of one update from the anchor.
///
/// For a naive update there is no metric or penalty: `lambda`, `alignment_c`
/// and `bound` are zero, `update_m_norm` is the Euclidean `ΔᵀΔ` and the
/// surrogate is the linear term `gᵀΔ`. For a penalized update
/// `predicted_leading_term` is `½ ΔᵀH_<tΔ`, and `bound` is infinite at λ = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErosionReport {
    pub measured_erosion: f64,
    pub predicted_leading_term: f64,
    pub bound: f64,
    pub alignment_c: f64,
    pub lambda: f64,
    pub update_m_norm: f64,
    pub new_task_surrogate: f64,
}

/// Runs `spec` from the anchor of `ensemble` with new-task gradient `g`.
pub fn analyze_update(ensemble: &StageEnsemble, spec: &UpdateSpec, g: &[f64]) -> Result<ErosionReport> {
    let anchor = anchor_state(ensemble)?;
    check_dim(anchor.len(), g.len())?;
    let (h_prior, _) = retained_hessian_and_grad(ensemble, &anchor)?;
    match spec {
        UpdateSpec::Naive { step_size } => {
            let next = naive_step(&anchor, g, *step_size)?;
            let delta = next.sub(&anchor)?;
            Ok(ErosionReport {
                measured_erosion: measure_erosion(ensemble, &anchor, &next)?,
                predicted_leading_term: predicted_erosion(g, &h_prior, *step_size)?,
                bound: 0.0,
                alignment_c: 0.0,
                lambda: 0.0,
                update_m_norm: delta.norm_sq(),
                new_task_surrogate: delta.dot(g),
            })
        }
        UpdateSpec::Cpe {
            lambda,
            new_task_hessian,
            preservation_metric,
        } => {
            let c = gen_eig_max(&h_prior, preservation_metric)?;
            cpe_report(ensemble, &anchor, &h_prior, g, new_task_hessian, preservation_metric, *lambda, c)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cpe_report(
    ensemble: &StageEnsemble,
    anchor: &Vector,
    h_prior: &SymMatrix,
    g: &[f64],
    h_new: &SymMatrix,
    metric: &SymMatrix,
    lambda: f64,
    c: f64,
) -> Result<ErosionReport> {
    let delta = cpe_step(g, h_new, metric, lambda)?;
    let next = anchor.add_scaled(1.0, &delta)?;
    let bound = if lambda > 0.0 {
        erosion_bound(g, metric, c, lambda)?
    } else {
        f64::INFINITY
    };
    Ok(ErosionReport {
        measured_erosion: measure_erosion(ensemble, anchor, &next)?,
        predicted_leading_term: 0.5 * h_prior.quad_form(&delta)?,
        bound,
        alignment_c: c,
        lambda,
        update_m_norm: metric.quad_form(&delta)?,
        new_task_surrogate: delta.dot(g) + 0.5 * h_new.quad_form(&delta)?,
    })
}

/// One report per λ, sharing the anchor, `g` and the alignment constant.
pub fn lambda_sweep(
    ensemble: &StageEnsemble,
    g: &[f64],
    h_new: &SymMatrix,
    metric: &SymMatrix,
    lambdas: &[f64],
) -> Result<Vec<ErosionReport>> {
    validate_lambda_grid(lambdas)?;
    let anchor = anchor_state(ensemble)?;
    check_dim(anchor.len(), g.len())?;
    let (h_prior, _) = retained_hessian_and_grad(ensemble, &anchor)?;
    let c = gen_eig_max(&h_prior, metric)?;
    lambdas
        .iter()
        .map(|&l| cpe_report(ensemble, &anchor, &h_prior, g, h_new, metric, l, c))
        .collect()
}

/// A λ grid must be nonempty, positive and strictly increasing.
pub fn validate_lambda_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::EmptyGrid);
    }
    for (i, &l) in lambdas.iter().enumerate() {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidGrid(format!("lambda[{i}] = {l} is not > 0")));
        }
        if i > 0 && l <= lambdas[i - 1] {
            return Err(Error::InvalidGrid(format!(
                "lambda[{i}] = {l} does not exceed lambda[{}] = {}",
                i - 1,
                lambdas[i - 1]
            )));
        }
    }
    Ok(())
}
