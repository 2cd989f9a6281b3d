use rdslab::lyapunov::{
    integrability_estimate, lyapunov_spectrum, oseledets_splitting, BaseOrbit, Class, IntegrabilityBase,
    LyapunovOptions,
};
use rdslab::stationary::{stationary_point, StationaryOptions};
use rdslab::{NoisePath, Nonlinearity, NonlinearityKind, Rds, SpectralModel};

/// Index of the value closest to zero.
fn nearest_zero(xs: &[f64]) -> usize {
    (0..xs.len()).min_by(|&i, &j| xs[i].abs().total_cmp(&xs[j].abs())).unwrap()
}

#[test]
fn linear_spectrum_matches_drifts() {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::Zero, &m).unwrap();
    let p = NoisePath::sample(1e-2, -1.0, 1001.0, [1.0, 1.0], 1).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let s = lyapunov_spectrum(&rds, &p.view(), BaseOrbit::Explicit(m.zero_state()), LyapunovOptions::new(0.1, 10_000))
        .unwrap();
    // oracle: diagonal flow, exponent μ - k² for mode k
    let oracle: Vec<f64> = (0..8).map(|k| 0.5 - (k * k) as f64).collect();
    assert_eq!(&oracle[..4], &[0.5, -0.5, -3.5, -8.5]);
    let near = nearest_zero(&oracle);
    for (i, (e, o)) in s.exponents.iter().zip(&oracle).enumerate() {
        let err = (e - o).abs();
        let tol = if i == near { 0.02 } else { 0.02 * o.abs() };
        assert!(err <= tol, "exponent {i}: {e} vs {o}");
    }
    assert!(s.groups.iter().all(|g| g.multiplicity == 1));
    assert_eq!(s.groups[0].class, Class::Unstable);
}

#[test]
fn linear_nonlinearity_shifts_every_exponent() {
    let c = 0.2;
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::Linear { c }, &m).unwrap();
    let p = NoisePath::sample(1e-3, -1.0, 101.0, [1.0, 1.0], 2).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let s = lyapunov_spectrum(&rds, &p.view(), BaseOrbit::Explicit(m.zero_state()), LyapunovOptions::new(0.1, 1000))
        .unwrap();
    // oracle: each mode solves x' = (μ - k² + c)x
    for (k, e) in s.exponents.iter().enumerate() {
        let shift = e - (0.5 - (k * k) as f64);
        assert!((shift - c).abs() <= 0.01, "mode {k}: shift {shift}");
    }
}

#[test]
fn nonlinear_spectrum_along_stationary_orbit() {
    let m = SpectralModel::build(6, 0.5, 0.5, 1.5).unwrap();
    let a = 0.1;
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a }, &m).unwrap();
    let p = NoisePath::sample(1e-2, -120.0, 150.0, [0.5, 0.5], 11).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let sp = stationary_point(&rds, &p.view(), (-20.0, 60.0), StationaryOptions::default()).unwrap();
    let mut opts = LyapunovOptions::new(0.1, 800);
    opts.start_block = -200;
    let s = lyapunov_spectrum(&rds, &p.view(), BaseOrbit::Stationary(&sp), opts).unwrap();
    // the Jacobian of a·tanh has spectrum in [0, a], so the volume rate
    // lies between the linear trace and the trace plus N·a
    let trace: f64 = m.drifts().iter().sum();
    let total: f64 = s.exponents.iter().sum();
    assert!(total >= trace - 1e-6 && total <= trace + 6.0 * a + 1e-6, "{total} vs {trace}");
    assert!(s.exponents.windows(2).all(|w| w[0] >= w[1]));
    assert!(s.ci.iter().all(|c| *c < 0.05));
    assert!(s.equivariance_angles.iter().all(|x| *x < 1e-6), "{:?}", s.equivariance_angles);

    let split = oseledets_splitting(&s, 1e-3).unwrap();
    assert_eq!((split.unstable.ncols(), split.center.ncols(), split.stable.ncols()), (1, 0, 5));
    assert!(split.projection_defect() < 1e-8);
}

#[test]
fn history_converges_to_final_estimate() {
    let m = SpectralModel::build(4, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.2 }, &m).unwrap();
    let p = NoisePath::sample(1e-2, -1.0, 101.0, [1.0, 1.0], 5).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let mut opts = LyapunovOptions::new(0.1, 1000);
    opts.history_every = 100;
    let s = lyapunov_spectrum(&rds, &p.view(), BaseOrbit::Explicit(m.unit_mode(0)), opts).unwrap();
    assert_eq!(s.history.len(), 10);
    let last = &s.history[9].estimates;
    let mut sorted = last.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    for (a, b) in sorted.iter().zip(&s.exponents) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn integrability_statistics_are_light_tailed() {
    let m = SpectralModel::build(6, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.1 }, &m).unwrap();
    let paths: Vec<NoisePath> =
        (0..100).map(|s| NoisePath::sample(1e-2, -60.0, 60.0, [1.0, 1.0], 500 + s).unwrap()).collect();
    let r = integrability_estimate(&m, &paths, &g, IntegrabilityBase::Stationary, 0.1, 1).unwrap();
    assert_eq!(r.samples, 100);
    assert!(!r.heavy_tail);
    // the unstable mode alone contributes about 0.1·(μ + a)
    assert!(r.forward.mean > 0.0 && r.forward.max < 0.1 * (0.5 + 0.1) + 1e-9);
    assert!(integrability_estimate(&m, &paths[..50], &g, IntegrabilityBase::Origin, 0.1, 1).is_err());
}

#[test]
fn invalid_options_are_rejected() {
    let m = SpectralModel::build(4, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::Zero, &m).unwrap();
    let p = NoisePath::zero(1e-2, -1.0, 10.0).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let orbit = || BaseOrbit::Explicit(m.zero_state());
    assert!(lyapunov_spectrum(&rds, &p.view(), orbit(), LyapunovOptions::new(0.1, 10)).is_err());
    assert!(lyapunov_spectrum(&rds, &p.view(), orbit(), LyapunovOptions::new(0.015, 100)).is_err());
    // runs past the end of the path
    assert!(lyapunov_spectrum(&rds, &p.view(), orbit(), LyapunovOptions::new(0.1, 200)).is_err());
}
