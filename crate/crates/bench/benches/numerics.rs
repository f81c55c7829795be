use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use erosion_core::numerics::{cholesky_solve, gen_eig_max, sample_psd, sym_eigen};
use erosion_core::Rng;

fn dense(c: &mut Criterion) {
    let mut group = c.benchmark_group("dense");
    for dim in [8usize, 16, 32, 64] {
        let mut rng = Rng::new(dim as u64);
        let a = sample_psd(&mut rng, dim, 0.5, 5.0).unwrap();
        let m = sample_psd(&mut rng, dim, 1.0, 2.0).unwrap();
        let b = rng.normal_vector(dim);
        group.bench_with_input(BenchmarkId::new("cholesky_solve", dim), &dim, |bch, _| {
            bch.iter(|| cholesky_solve(black_box(&a), black_box(b.as_slice())).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sym_eigen", dim), &dim, |bch, _| {
            bch.iter(|| sym_eigen(black_box(&a)))
        });
        group.bench_with_input(BenchmarkId::new("gen_eig_max", dim), &dim, |bch, _| {
            bch.iter(|| gen_eig_max(black_box(&a), black_box(&m)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, dense);
criterion_main!(benches);
