//! Deterministic random generation and small dense symmetric linear algebra.
//!
//! Everything here works on dense storage and targets dimensions of at most a
//! few hundred. Matrices are symmetric by construction: only the lower
//! triangle is stored.

mod eigen;
mod matrix;
mod rng;
pub(crate) mod vector;

pub use eigen::{gen_eig_max, sample_psd, sym_eigen, SymEigen};
pub use matrix::{cholesky_solve, Cholesky, SymMatrix, PD_PIVOT_RTOL};
pub use rng::Rng;
pub use vector::Vector;
