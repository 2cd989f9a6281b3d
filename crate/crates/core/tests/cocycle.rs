use nalgebra::DVector;
use proptest::prelude::*;
use rdslab::{NoisePath, Nonlinearity, NonlinearityKind, Rds, SolverOptions, SpectralModel};

fn start(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |k, _| 1.0 / (1.0 + k as f64))
}

/// Successive differences of `X(1)` over paths coarsened by 1, 2, 4, ...
fn refinement_gaps(path: &NoisePath, model: &SpectralModel, g: &Nonlinearity, levels: usize) -> Vec<f64> {
    let xi = start(model.n_modes());
    let outs: Vec<DVector<f64>> = (0..levels)
        .map(|l| {
            let p = path.coarsen(1 << l).unwrap();
            let rds = Rds::new(model, &p, g).unwrap();
            rds.cocycle_apply(&p.view(), 1.0, &xi).unwrap()
        })
        .collect();
    outs.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect()
}

#[test]
fn deterministic_forcing_converges_at_first_order() {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.1 }, &m).unwrap();
    let p = NoisePath::zero(1.25e-4, -1.0, 2.0).unwrap();
    let gaps = refinement_gaps(&p, &m, &g, 5);
    for w in gaps.windows(2) {
        let order = (w[1] / w[0]).log2();
        assert!(order > 0.9, "{gaps:?}");
    }
}

#[test]
fn noisy_refinement_gaps_shrink() {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.1 }, &m).unwrap();
    let p = NoisePath::sample(1.25e-4, -40.0, 2.0, [1.0, 1.0], 5).unwrap();
    let gaps = refinement_gaps(&p, &m, &g, 5);
    // pathwise rate of the exact OU sampler under coarsening is about 1/2
    let order = (gaps[3] / gaps[0]).log2() / 3.0;
    assert!(order > 0.5, "{gaps:?}");
}

#[test]
fn zero_nonlinearity_matches_linear_cocycle() {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::Zero, &m).unwrap();
    let p = NoisePath::sample(1e-2, -40.0, 5.0, [1.0, 0.5], 12).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let xi = start(8);
    for t in [0.0, 0.01, 0.5, 2.0] {
        let a = rds.cocycle_apply(&p.view(), t, &xi).unwrap();
        let b = rds.linear_cocycle_apply(&p.view(), t, &xi).unwrap();
        assert!((&a - &b).norm() < 1e-12 * b.norm().max(1.0), "t = {t}");
    }
}

#[test]
fn linear_nonlinearity_closed_form_step() {
    let c = 0.2;
    let m = SpectralModel::build(6, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::Linear { c }, &m).unwrap();
    let p = NoisePath::zero(1e-2, -1.0, 2.0).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let xi = start(6);
    let out = rds.cocycle_apply(&p.view(), 1.0, &xi).unwrap();
    // scalar implicit step x' = e^{ah}x + hφ₁(ah)·c·x', 100 times
    let h = 1e-2f64;
    for (k, a) in m.drifts().iter().enumerate() {
        let z = a * h;
        let phi = if z.abs() < 1e-12 { 1.0 } else { z.exp_m1() / z };
        let factor = z.exp() / (1.0 - h * phi * c);
        let oracle = xi[k] * factor.powi(100);
        assert!((out[k] - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
    }
}

#[test]
fn picard_tolerance_controls_the_step() {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.5 }, &m).unwrap();
    let p = NoisePath::sample(1e-2, -40.0, 2.0, [1.0, 1.0], 1).unwrap();
    let loose = Rds::new(&m, &p, &g).unwrap();
    let tight = Rds::with_options(&m, &p, &g, SolverOptions { picard_tol: 1e-15, ..SolverOptions::default() }).unwrap();
    let xi = start(8);
    let a = loose.solve_random_pde(&p.view(), &xi, 1.0).unwrap();
    let b = tight.solve_random_pde(&p.view(), &xi, 1.0).unwrap();
    assert_eq!(a.times.len(), 101);
    assert!(b.stats.picard_total > a.stats.picard_total);
    assert!((a.last_field() - b.last_field()).norm() < 1e-8);
}

#[test]
fn too_large_step_is_refused() {
    let m = SpectralModel::build(4, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 50.0 }, &m).unwrap();
    let p = NoisePath::zero(0.5, -1.0, 2.0).unwrap();
    assert!(Rds::new(&m, &p, &g).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn cocycle_identity(t_steps in 0usize..200, s_steps in 0usize..200, seed in 0u64..1000, scale in 0.1..3.0f64) {
        let dt = 1e-3;
        let m = SpectralModel::build(6, 0.5, 0.5, 1.5).unwrap();
        let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.1 }, &m).unwrap();
        let p = NoisePath::sample(dt, -20.0, 1.0, [1.0, 1.0], seed).unwrap();
        let rds = Rds::new(&m, &p, &g).unwrap();
        let xi = start(6) * scale;
        let r = rds.cocycle_residual(&p.view(), t_steps as f64 * dt, s_steps as f64 * dt, &xi).unwrap();
        prop_assert!(r <= 10.0 * dt);
        let rl = rds.linear_cocycle_residual(&p.view(), t_steps as f64 * dt, s_steps as f64 * dt, &xi).unwrap();
        prop_assert!(rl <= 1e-10);
    }
}
