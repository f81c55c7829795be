use erosion_core::geometry::*;
use erosion_core::numerics::{cholesky_solve, sample_psd};
use erosion_core::{Rng, SymMatrix, Vector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn instance(seed: u64) -> GeometryInstance {
    GeometryInstance::sample(&mut Rng::new(seed), &InstanceConfig::default()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn naive_erosion_is_exactly_the_curvature_term() {
    let mut rng = Rng::new(1);
    for i in 0..300 {
        let inst = GeometryInstance::sample(&mut rng, &InstanceConfig::default()).unwrap();
        let eta = [1e-3, 1e-2, 1e-1][i % 3];
        let r = analyze_update(&inst.ensemble, &UpdateSpec::Naive { step_size: eta }, &inst.gradient).unwrap();
        let oracle = 0.5 * eta * eta * inst.retained_hessian.quad_form(&inst.gradient).unwrap();
        assert!(rel_err(r.measured_erosion, oracle) < 1e-8, "{} vs {oracle}", r.measured_erosion);
    }
}

#[test]
fn measured_erosion_equals_risk_difference() {
    // direct difference of risks through an independent dense evaluation
    let mut rng = Rng::new(2);
    for _ in 0..50 {
        let inst = GeometryInstance::sample(&mut rng, &InstanceConfig::default()).unwrap();
        let next = inst.anchor.add_scaled(1.0, &rng.normal_vector(inst.dim())).unwrap();
        let risk = |x: &[f64]| -> f64 {
            inst.ensemble
                .tasks()
                .iter()
                .zip(inst.ensemble.weights())
                .map(|(t, a)| {
                    let n = t.dim();
                    let h = DMatrix::from_fn(n, n, |i, j| t.hessian().get(i, j));
                    let d = DVector::from_column_slice(x) - DVector::from_column_slice(t.minimizer());
                    a * (0.5 * d.dot(&(&h * &d)) + t.bias())
                })
                .sum()
        };
        let direct = risk(&next) - risk(&inst.anchor);
        let measured = measure_erosion(&inst.ensemble, &inst.anchor, &next).unwrap();
        assert!((direct - measured).abs() < 1e-9 * direct.abs().max(1.0));
    }
}

#[test]
fn cpe_erosion_never_exceeds_bound() {
    let mut rng = Rng::new(3);
    for i in 0..300 {
        let inst = GeometryInstance::sample(&mut rng, &InstanceConfig::default()).unwrap();
        let lambda = [0.1, 1.0, 10.0, 100.0][i % 4];
        let spec = UpdateSpec::Cpe {
            lambda,
            new_task_hessian: inst.new_task_hessian.clone(),
            preservation_metric: inst.metric.clone(),
        };
        let r = analyze_update(&inst.ensemble, &spec, &inst.gradient).unwrap();
        assert!(r.measured_erosion <= r.bound + 1e-10, "{r:?}");
        assert!(r.measured_erosion >= -1e-12);
    }
}

#[test]
fn lambda_path_is_monotone() {
    let grid = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0];
    for seed in 0..100 {
        let inst = instance(seed);
        let rs = lambda_sweep(&inst.ensemble, &inst.gradient, &inst.new_task_hessian, &inst.metric, &grid).unwrap();
        for w in rs.windows(2) {
            assert!(w[1].update_m_norm <= w[0].update_m_norm + 1e-10);
            assert!(w[1].new_task_surrogate >= w[0].new_task_surrogate - 1e-10);
        }
        for r in &rs {
            let scaled = r.measured_erosion * r.lambda * r.lambda;
            let cap = r.bound * r.lambda * r.lambda;
            assert!(scaled <= cap + 1e-10 * cap.max(1.0));
        }
    }
}

#[test]
fn gradient_in_retained_null_space_causes_no_erosion() {
    let h = SymMatrix::diag(&[2.0, 0.0]);
    let task = QuadraticTask::new(h, Vector::from(vec![0.0, 0.0]), 0.0).unwrap();
    let ens = StageEnsemble::uniform(vec![task.clone()]).unwrap();
    let prev = [0.0, 0.0];
    let next = naive_step(&prev, &[0.0, 5.0], 0.1).unwrap();
    assert_eq!(measure_erosion(&ens, &prev, &next).unwrap(), 0.0);
}

#[test]
fn top_eigvec_gradient_saturates_alignment() {
    let cfg = InstanceConfig {
        gradient: GradientSource::TopEigvec,
        ..InstanceConfig::default()
    };
    let mut rng = Rng::new(4);
    for _ in 0..20 {
        let inst = GeometryInstance::sample(&mut rng, &cfg).unwrap();
        let eta = 0.01;
        let r = analyze_update(&inst.ensemble, &UpdateSpec::Naive { step_size: eta }, &inst.gradient).unwrap();
        let top = erosion_core::numerics::sym_eigen(&inst.retained_hessian).max();
        let oracle = 0.5 * eta * eta * top * inst.gradient.norm_sq();
        assert!(rel_err(r.measured_erosion, oracle) < 1e-8);
    }
}

#[test]
fn zero_lambda_is_the_unpenalized_newton_step() {
    let mut rng = Rng::new(5);
    let cfg = InstanceConfig {
        new_task_eig: [0.5, 3.0],
        ..InstanceConfig::default()
    };
    let inst = GeometryInstance::sample(&mut rng, &cfg).unwrap();
    let d0 = cpe_step(&inst.gradient, &inst.new_task_hessian, &inst.metric, 0.0).unwrap();
    let newton = cholesky_solve(&inst.new_task_hessian, &inst.gradient).unwrap().scaled(-1.0);
    assert!(d0.sub(&newton).unwrap().norm() < 1e-12 * newton.norm().max(1.0));
}

#[test]
fn large_lambda_pins_the_anchor() {
    let inst = instance(6);
    let small = cpe_step(&inst.gradient, &inst.new_task_hessian, &inst.metric, 1.0).unwrap();
    let big = cpe_step(&inst.gradient, &inst.new_task_hessian, &inst.metric, 1e8).unwrap();
    assert!(big.norm() < 1e-6 * small.norm());
}

#[test]
fn sampling_is_deterministic() {
    let a = instance(7);
    let b = instance(7);
    assert_eq!(a.anchor, b.anchor);
    assert_eq!(a.gradient, b.gradient);
    assert_eq!(a.metric, b.metric);
}

proptest! {
    #[test]
    fn bound_holds_for_any_seed(seed in any::<u64>(), lambda in 0.01f64..1000.0) {
        let inst = instance(seed);
        let spec = UpdateSpec::Cpe {
            lambda,
            new_task_hessian: inst.new_task_hessian.clone(),
            preservation_metric: inst.metric.clone(),
        };
        let r = analyze_update(&inst.ensemble, &spec, &inst.gradient).unwrap();
        prop_assert!(r.measured_erosion <= r.bound + 1e-10);
    }

    #[test]
    fn anchor_is_stationary(seed in any::<u64>()) {
        let inst = instance(seed);
        let (_, g) = retained_hessian_and_grad(&inst.ensemble, &inst.anchor).unwrap();
        let scale = inst.ensemble.tasks().iter().map(|t| t.minimizer().norm()).fold(1.0, f64::max);
        prop_assert!(g.norm() < 1e-9 * scale * 10.0);
    }

    #[test]
    fn metric_scaling_matches_lambda_scaling(seed in any::<u64>(), s in 0.1f64..10.0) {
        // (H + λ(sM)) = (H + (λs)M)
        let mut rng = Rng::new(seed);
        let n = 4;
        let h = sample_psd(&mut rng, n, 0.0, 2.0).unwrap();
        let m = sample_psd(&mut rng, n, 0.5, 2.0).unwrap();
        let g = rng.normal_vector(n);
        let a = cpe_step(&g, &h, &m.scaled(s), 2.0).unwrap();
        let b = cpe_step(&g, &h, &m, 2.0 * s).unwrap();
        prop_assert!(a.sub(&b).unwrap().norm() < 1e-10 * a.norm().max(1.0));
    }
}
