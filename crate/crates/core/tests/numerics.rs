use erosion_core::numerics::{cholesky_solve, gen_eig_max, sample_psd, sym_eigen, Cholesky};
use erosion_core::{Error, Rng, SymMatrix, Vector};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

fn to_na(m: &SymMatrix) -> DMatrix<f64> {
    let n = m.dim();
    DMatrix::from_fn(n, n, |i, j| m.get(i, j))
}

fn random_pd(rng: &mut Rng, n: usize) -> SymMatrix {
    // BᵀB + n·I: well conditioned, independent of sample_psd
    let b: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vector(n).into_inner()).collect();
    SymMatrix::from_fn(n, |i, j| {
        let s: f64 = (0..n).map(|k| b[k][i] * b[k][j]).sum();
        s + if i == j { n as f64 } else { 0.0 }
    })
}

#[test]
fn cholesky_matches_oracle_on_random_systems() {
    let mut rng = Rng::new(11);
    for _ in 0..100 {
        let n = 1 + rng.below(32);
        let a = random_pd(&mut rng, n);
        let b = rng.normal_vector(n);
        let x = cholesky_solve(&a, &b).unwrap();
        let na = to_na(&a);
        let r = &na * DVector::from_column_slice(&x) - DVector::from_column_slice(&b);
        assert!(r.norm() <= 1e-10 * b.norm(), "residual {}", r.norm());
        let oracle = na.cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        let diff = (DVector::from_column_slice(&x) - &oracle).norm();
        assert!(diff <= 1e-10 * oracle.norm().max(1.0));
    }
}

#[test]
fn cholesky_recovers_known_solution() {
    let mut rng = Rng::new(12);
    for _ in 0..50 {
        let n = 2 + rng.below(20);
        let a = random_pd(&mut rng, n);
        let x_true = rng.normal_vector(n);
        let b = a.mul_vec(&x_true).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        let err = x.sub(&x_true).unwrap().norm() / x_true.norm();
        assert!(err < 1e-10, "{err}");
    }
}

#[test]
fn inv_quad_form_matches_solve() {
    let mut rng = Rng::new(13);
    let a = random_pd(&mut rng, 9);
    let b = rng.normal_vector(9);
    let ch = Cholesky::factor(&a).unwrap();
    let via_solve = b.dot(&ch.solve(&b).unwrap());
    assert!((ch.inv_quad_form(&b).unwrap() - via_solve).abs() < 1e-12 * via_solve);
}

#[test]
fn rank_deficient_is_rejected() {
    let v = [1.0, 2.0, 3.0];
    let a = SymMatrix::from_fn(3, |i, j| v[i] * v[j]);
    assert!(matches!(
        cholesky_solve(&a, &[1.0, 0.0, 0.0]),
        Err(Error::NotPositiveDefinite { .. })
    ));
}

#[test]
fn sym_eigen_matches_oracle() {
    let mut rng = Rng::new(14);
    for _ in 0..30 {
        let n = 1 + rng.below(24);
        let a = SymMatrix::from_fn(n, |_, _| 0.0);
        let mut a = a;
        for i in 0..n {
            for j in 0..=i {
                a.set(i, j, rng.normal());
            }
        }
        let mine = sym_eigen(&a);
        let mut oracle: Vec<f64> = SymmetricEigen::new(to_na(&a)).eigenvalues.iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        for (x, y) in mine.values.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-9 * a.frobenius().max(1.0));
        }
        for k in 0..n {
            let v = mine.vector(k);
            let av = a.mul_vec(&v).unwrap();
            let r = av.add_scaled(-mine.values[k], &v).unwrap().norm();
            assert!(r < 1e-9 * a.frobenius().max(1.0));
        }
    }
}

#[test]
fn gen_eig_max_matches_oracle_and_bounds_rayleigh_quotient() {
    let mut rng = Rng::new(15);
    for _ in 0..30 {
        let n = 2 + rng.below(16);
        let h = sample_psd(&mut rng, n, 0.0, 5.0).unwrap();
        let m = random_pd(&mut rng, n);
        let c = gen_eig_max(&h, &m).unwrap();
        let l = to_na(&m).cholesky().unwrap().l();
        let li = l.try_inverse().unwrap();
        let sym = &li * to_na(&h) * li.transpose();
        let oracle = SymmetricEigen::new((&sym + sym.transpose()) * 0.5).eigenvalues.max();
        assert!((c - oracle).abs() < 1e-9 * oracle.abs().max(1.0));
        for _ in 0..1000 {
            let v = rng.normal_vector(n);
            let q = h.quad_form(&v).unwrap() / m.quad_form(&v).unwrap();
            assert!(q <= c * (1.0 + 1e-10) + 1e-12);
        }
    }
}

#[test]
fn gen_eig_max_scales() {
    let mut rng = Rng::new(16);
    let h = sample_psd(&mut rng, 6, 0.1, 3.0).unwrap();
    let m = random_pd(&mut rng, 6);
    let c = gen_eig_max(&h, &m).unwrap();
    let c_h = gen_eig_max(&h.scaled(3.0), &m).unwrap();
    let c_m = gen_eig_max(&h, &m.scaled(4.0)).unwrap();
    assert!((c_h - 3.0 * c).abs() < 1e-10 * c_h);
    assert!((c_m - c / 4.0).abs() < 1e-10 * c);
}

#[test]
fn sample_psd_spectrum_in_range() {
    let mut rng = Rng::new(17);
    for _ in 0..50 {
        let n = 1 + rng.below(32);
        let a = sample_psd(&mut rng, n, 0.5, 2.0).unwrap();
        let ev = SymmetricEigen::new(to_na(&a)).eigenvalues;
        assert!(ev.min() >= 0.5 - 1e-9 && ev.max() <= 2.0 + 1e-9);
    }
}

#[test]
fn substreams_do_not_depend_on_parent_draws() {
    let root = Rng::new(99);
    let mut touched = Rng::new(99);
    for _ in 0..17 {
        touched.normal();
    }
    let a: Vec<f64> = (0..8).map({
        let mut s = root.substream("x");
        move |_| s.uniform()
    }).collect();
    let b: Vec<f64> = (0..8).map({
        let mut s = touched.substream("x");
        move |_| s.uniform()
    }).collect();
    assert_eq!(a, b);
    let mut p = root.substream_indexed("x", 0);
    let mut q = root.substream_indexed("x", 1);
    assert_ne!(p.uniform(), q.uniform());
}

#[test]
fn vector_rejects_non_finite() {
    assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
}
