use serde::{Deserialize, Serialize};

use super::Vector;
use crate::error::{check_dim, Error, Result};

/// A Cholesky pivot at or below `PD_PIVOT_RTOL * max diagonal` is rejected.
pub const PD_PIVOT_RTOL: f64 = 1e-12;

#[inline]
fn packed(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

/// Dense symmetric matrix stored as its packed lower triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    lower: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            lower: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diag(&vec![1.0; dim])
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            m.set(i, i, x);
        }
        m
    }

    /// Builds from a generator evaluated on the lower triangle (`i >= j`).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut lower = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in 0..=i {
                lower.push(f(i, j));
            }
        }
        Self { dim, lower }
    }

    /// Builds from full rows; the input must be square and exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            check_dim(n, row.len())?;
            for j in 0..i {
                if row[j] != rows[j][i] {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let m = Self::from_fn(n, |i, j| rows[i][j]);
        if !m.is_finite() {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[packed(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.lower[packed(i, j)] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.lower.iter().all(|x| x.is_finite())
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.get(i, i))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vector> {
        check_dim(self.dim, x.len())?;
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = i * (i + 1) / 2;
            for j in 0..i {
                let a = self.lower[row + j];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.lower[row + i] * x[i];
        }
        Ok(Vector::from(y))
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let ay = self.mul_vec(y)?;
        Ok(ay.dot(x))
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        self.bilinear(x, x)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &SymMatrix) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        Ok(Self {
            dim: self.dim,
            lower: self
                .lower
                .iter()
                .zip(&other.lower)
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            lower: self.lower.iter().map(|a| s * a).collect(),
        }
    }

    /// Frobenius norm of the full (not packed) matrix.
    pub fn frobenius(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..=i {
                let a = self.get(i, j);
                s += if i == j { a * a } else { 2.0 * a * a };
            }
        }
        s.sqrt()
    }
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &SymMatrix) -> Result<Self> {
        let n = a.dim();
        let max_diag = a.max_diag();
        let threshold = PD_PIVOT_RTOL * max_diag.max(0.0);
        let mut l = vec![0.0; n * (n + 1) / 2];
        for j in 0..n {
            let rj = j * (j + 1) / 2;
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[rj + k] * l[rj + k];
            }
            if !(d > threshold) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    index: j,
                    pivot: d,
                    threshold,
                });
            }
            let ljj = d.sqrt();
            l[rj + j] = ljj;
            for i in (j + 1)..n {
                let ri = i * (i + 1) / 2;
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[ri + k] * l[rj + k];
                }
                l[ri + j] = s / ljj;
            }
        }
        Ok(Self { dim: n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.lower[i * (i + 1) / 2 + j]
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vector> {
        check_dim(self.dim, b.len())?;
        let mut y = b.to_vec();
        for i in 0..self.dim {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l(i, k) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
        Ok(Vector::from(y))
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Result<Vector> {
        check_dim(self.dim, y.len())?;
        let mut x = y.to_vec();
        for i in (0..self.dim).rev() {
            let mut s = x[i];
            for k in (i + 1)..self.dim {
                s -= self.l(k, i) * x[k];
            }
            x[i] = s / self.l(i, i);
        }
        Ok(Vector::from(x))
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vector> {
        let y = self.solve_lower(b)?;
        self.solve_upper(&y)
    }

    /// `bᵀ A⁻¹ b = ‖L⁻¹ b‖²`.
    pub fn inv_quad_form(&self, b: &[f64]) -> Result<f64> {
        Ok(self.solve_lower(b)?.norm_sq())
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn cholesky_solve(a: &SymMatrix, b: &[f64]) -> Result<Vector> {
    check_dim(a.dim(), b.len())?;
    Cholesky::factor(a)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve() {
        let x = cholesky_solve(&SymMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_solve() {
        let x = cholesky_solve(&SymMatrix::diag(&[2.0, 4.0]), &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_solve() {
        let a = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let x = cholesky_solve(&a, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_singular_and_indefinite() {
        let singular = SymMatrix::diag(&[1.0, 0.0]);
        assert!(matches!(
            cholesky_solve(&singular, &[1.0, 1.0]),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
        let indefinite = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(cholesky_solve(&indefinite, &[1.0, 1.0]).is_err());
        // pivot just above zero but below the relative threshold
        let near = SymMatrix::diag(&[1.0, 1e-13]);
        assert!(Cholesky::factor(&near).is_err());
        assert!(Cholesky::factor(&SymMatrix::diag(&[1.0, 1e-11])).is_ok());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            cholesky_solve(&SymMatrix::identity(2), &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn from_rows_rejects_asymmetric() {
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.5, 1.0]]).is_err());
    }

    #[test]
    fn mul_vec_matches_dense() {
        let rows = vec![
            vec![4.0, 1.0, -2.0],
            vec![1.0, 3.0, 0.5],
            vec![-2.0, 0.5, 5.0],
        ];
        let a = SymMatrix::from_rows(&rows).unwrap();
        let x = [1.0, -1.0, 2.0];
        let y = a.mul_vec(&x).unwrap();
        for i in 0..3 {
            let expect: f64 = (0..3).map(|j| rows[i][j] * x[j]).sum();
            assert_eq!(y[i], expect);
        }
    }

    #[test]
    fn inv_quad_form_matches_solve() {
        let a = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let b = [1.0, 3.0];
        let ch = Cholesky::factor(&a).unwrap();
        let x = ch.solve(&b).unwrap();
        let direct: f64 = x.dot(&b);
        assert!((ch.inv_quad_form(&b).unwrap() - direct).abs() < 1e-14);
    }
}
