use super::{Cholesky, Rng, SymMatrix, Vector};
use crate::error::{check_dim, Error, Result};

/// Off-diagonal Frobenius tolerance for Jacobi sweeps, relative to ‖A‖_F.
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix. Eigenvalues ascending; column
/// `k` of `vectors` (i.e. `vectors[i][k]`) pairs with `values[k]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl SymEigen {
    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn vector(&self, k: usize) -> Vector {
        self.vectors.iter().map(|row| row[k]).collect()
    }
}

fn off_diag_frobenius(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i][j] * a[i][j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigensolver.
pub fn sym_eigen(m: &SymMatrix) -> SymEigen {
    let n = m.dim();
    let mut a = m.to_rows();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = JACOBI_TOL * m.frobenius();

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diag_frobenius(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    SymEigen {
        values: order.iter().map(|&i| a[i][i]).collect(),
        vectors: v
            .iter()
            .map(|row| order.iter().map(|&k| row[k]).collect())
            .collect(),
    }
}

/// Smallest `c` with `H ⪯ c M`: the top eigenvalue of `L⁻¹ H L⁻ᵀ` where
/// `M = L Lᵀ`. Clamped at zero.
pub fn gen_eig_max(h: &SymMatrix, m: &SymMatrix) -> Result<f64> {
    check_dim(m.dim(), h.dim())?;
    let n = h.dim();
    let chol = Cholesky::factor(m)?;
    // X = L⁻¹ H, column by column (H symmetric, so columns are rows).
    let x: Vec<Vector> = (0..n)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| h.get(i, j)).collect();
            chol.solve_lower(&col)
        })
        .collect::<Result<_>>()?;
    // C = L⁻¹ Xᵀ; column j of C solves L c = (row j of X).
    let mut c = vec![vec![0.0; n]; n];
    for j in 0..n {
        let row_j: Vec<f64> = (0..n).map(|k| x[k][j]).collect();
        let cj = chol.solve_lower(&row_j)?;
        for i in 0..n {
            c[i][j] = cj[i];
        }
    }
    let whitened = SymMatrix::from_fn(n, |i, j| 0.5 * (c[i][j] + c[j][i]));
    Ok(sym_eigen(&whitened).max().max(0.0))
}

/// Random symmetric matrix `Q diag(λ) Qᵀ` with Haar-random orthogonal `Q` and
/// eigenvalues uniform in `[eig_lo, eig_hi]`.
pub fn sample_psd(rng: &mut Rng, dim: usize, eig_lo: f64, eig_hi: f64) -> Result<SymMatrix> {
    if dim == 0 {
        return Err(Error::InvalidRange("dimension must be at least 1".into()));
    }
    if !(eig_lo.is_finite() && eig_hi.is_finite() && 0.0 <= eig_lo && eig_lo <= eig_hi) {
        return Err(Error::InvalidRange(format!(
            "need 0 <= eig_lo <= eig_hi, got [{eig_lo}, {eig_hi}]"
        )));
    }
    let q = random_orthogonal(rng, dim);
    let lambda: Vec<f64> = (0..dim).map(|_| rng.uniform_in(eig_lo, eig_hi)).collect();
    Ok(SymMatrix::from_fn(dim, |i, j| {
        (0..dim).map(|k| q[k][i] * lambda[k] * q[k][j]).sum()
    }))
}

/// Rows of the returned matrix are orthonormal. Modified Gram-Schmidt with one
/// reorthogonalization pass on a Gaussian draw; the implied R has a positive
/// diagonal, which makes the result Haar distributed.
fn random_orthogonal(rng: &mut Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
        }
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}
