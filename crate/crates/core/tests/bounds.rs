use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdslab::bounds::*;
use rdslab::volterra::{graded_mesh, solve_extrapolated};
use rdslab::{NoisePath, Nonlinearity, NonlinearityKind, Rds, SpectralModel};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

/// Relative slack for the product-integration oracle's discretization error.
const ORACLE_SLACK: f64 = 1e-6;

fn random_instance(rng: &mut ChaCha8Rng) -> GronwallInstance {
    let beta = rng.random_range(0.2..0.6);
    let t_end = rng.random_range(0.5..2.0);
    let grid = graded_mesh(t_end, 100, 2.0);
    let mut k = rng.random_range(0.1..1.5);
    let kappa: Vec<f64> = grid
        .iter()
        .map(|_| {
            k += rng.random_range(0.0..0.02);
            k
        })
        .collect();
    let g: Vec<f64> = grid.iter().map(|_| rng.random_range(0.1..2.0)).collect();
    GronwallInstance::new(beta, grid, kappa, g).unwrap()
}

#[test]
fn gronwall_bound_dominates_volterra_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0;
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let bound = powered_gronwall_bound(&inst).unwrap();
        let u = solve_extrapolated(inst.beta, &inst.grid, 4, |t| inst.kappa_at(t), |t| inst.g_at(t)).unwrap();
        violations += bound.values.iter().zip(&u).filter(|(b, u)| **u > **b * (1.0 + ORACLE_SLACK)).count();
    }
    assert_eq!(violations, 0);
}

#[test]
fn constant_coefficients_give_the_mittag_leffler_solution() {
    // with κ, g constant the series is the exact solution g·E_{1-β}(κΓ(1-β)t^{1-β})
    let beta: f64 = 0.5;
    let grid = graded_mesh(1.0, 100, 2.0);
    let inst = GronwallInstance::new(beta, grid.clone(), vec![1.0; 101], vec![1.0; 101]).unwrap();
    let bound = powered_gronwall_bound(&inst).unwrap();
    // E_{1/2}(z) = e^{z²} erfc(-z)
    let z = gamma(0.5);
    let oracle = (z * z).exp() * erfc(-z);
    assert!((bound.values[100] - oracle).abs() < 1e-12 * oracle, "{} vs {oracle}", bound.values[100]);
    let u = solve_extrapolated(beta, &grid, 4, |_| 1.0, |_| 1.0).unwrap();
    assert!((u[100] / oracle - 1.0).abs() < ORACLE_SLACK);
}

#[test]
fn zero_forcing_gives_zero_bound() {
    let grid = graded_mesh(1.0, 20, 2.0);
    let inst = GronwallInstance::new(0.4, grid, vec![2.0; 21], vec![0.0; 21]).unwrap();
    assert!(powered_gronwall_bound(&inst).unwrap().values.iter().all(|v| *v == 0.0));
    assert!(GronwallInstance::new(0.4, vec![0.0, 1.0], vec![2.0, 1.0], vec![1.0, 1.0]).is_err());
    assert!(GronwallInstance::new(1.0, vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
}

#[test]
fn series_majorant_spot_value_and_grid() {
    // Σ 1/Γ(n/2) = E_{1/2,1/2}(1) = 1/√π + e·erfc(-1)
    let oracle = 1.0 / std::f64::consts::PI.sqrt() + std::f64::consts::E * erfc(-1.0);
    let series = r_alpha_series(1.0, 0.5).unwrap();
    // statrs' erfc is good to about 1e-11 here
    assert!((series - oracle).abs() < 1e-10, "{series} vs {oracle}");
    assert!((series - 5.573_169_664_310_04).abs() < 1e-13);
    // R(1) = (β+1)/(1-β) + e/(1-β) = 3 + 2e at β = 1/2
    let r = r_alpha(1.0, 0.5).unwrap();
    assert!((r - (3.0 + 2.0 * std::f64::consts::E)).abs() < 1e-12);
    for &alpha in &[1.0, 1.25, 1.5, 2.0, 3.0] {
        for j in 1..=8 {
            let beta = 0.1 * j as f64;
            let s = r_alpha_series(alpha, beta).unwrap();
            let r = r_alpha(alpha, beta).unwrap();
            assert!(s <= r, "α {alpha}, β {beta}: {s} > {r}");
        }
    }
    assert!(r_alpha(0.5, 0.5).is_err());
}

fn ensemble_member(seed: u64) -> (NoisePath, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = NoisePath::sample(1e-2, -60.0, 2.0, [1.0, 1.0], seed).unwrap();
    let xi = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
    (p, xi)
}

#[test]
fn cocycle_bounds_hold_on_an_ensemble() {
    let m = SpectralModel::build(4, -0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.5 }, &m).unwrap();
    let mut sups = Vec::new();
    let mut report = CertificationReport::default();
    for seed in 0..100 {
        let (p, xi) = ensemble_member(seed);
        let rds = Rds::new(&m, &p, &g).unwrap();
        let v = p.view();
        let a = apriori_bound_check(&rds, &v, &xi, 1.0).unwrap();
        report.push(BoundCheck::new("apriori", a.worst_excess, 0.0));
        sups.push(a.b_sup);
        let d = derivative_growth_bound(&rds, &v, &xi, 1.0).unwrap();
        report.push(BoundCheck::new("derivative", d.norm, d.envelope));
        let other = &xi * 0.5 + m.unit_mode(0) * 0.3;
        report.push(difference_bound_check(&rds, &v, &xi, &other, 1.0, 4).unwrap());
    }
    assert_eq!(report.checks.len(), 300);
    assert_eq!(report.failures(), 0);
    let moments = moment_report(&sups, &[1.0, 2.0, 4.0, 8.0]).unwrap();
    assert!(moments.norms.iter().all(|n| n.is_finite()));
    assert!(moments.norms.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12)));
}

#[test]
fn apriori_bound_is_refused_without_dissipation() {
    let m = SpectralModel::build(4, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.5 }, &m).unwrap();
    let p = NoisePath::sample(1e-2, -60.0, 2.0, [1.0, 1.0], 1).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    assert!(apriori_bound_check(&rds, &p.view(), &m.unit_mode(0), 1.0).is_err());
}

#[test]
fn derivative_is_holder_continuous() {
    let m = SpectralModel::build(4, -0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.5 }, &m).unwrap();
    let (p, xi) = ensemble_member(7);
    let rds = Rds::new(&m, &p, &g).unwrap();
    let r = g.holder().unwrap().r;
    let h = holder_derivative_check(&rds, &p.view(), &xi, &m.unit_mode(0), 1.0, r, &[1e-1, 1e-2, 1e-3, 1e-4]).unwrap();
    assert!(h.pass, "{h:?}");
    assert!(holder_derivative_check(&rds, &p.view(), &xi, &xi, 1.0, 1.5, &[1e-2]).is_err());
}

#[test]
fn kernel_power_is_integrable_only_below_the_critical_exponent() {
    let sizes = [16, 32, 64, 128, 256];
    let m = SpectralModel::build(8, 0.0, 0.5, 1.5).unwrap();
    let k = kernel_integrability_check(&m, 1.0, 1.0, &sizes).unwrap();
    assert!(k.finite && k.quadrature_change < 1e-6, "{k:?}");
    // qβ = 1.2: the truncated integrals keep growing with the mode count
    let m = SpectralModel::build(8, 0.0, 0.3, 1.5).unwrap();
    let k = kernel_integrability_check(&m, 4.0, 1.0, &sizes).unwrap();
    assert!(!k.finite && !k.trend.converges, "{k:?}");
    assert!(k.trend.values.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn trace_class_sum_separates_one_and_two_dimensions() {
    let sizes = [64, 128, 256, 512, 1024];
    let one = trace_class_trend(1, 1.0, &sizes).unwrap();
    let two = trace_class_trend(2, 1.0, &sizes).unwrap();
    assert!(one.converges && !two.converges);
    // for λ = k the tail behaves like ½ log n: doubling adds ½ log 2
    let step = two.values[4] - two.values[3];
    assert!((step - 0.5 * 2f64.ln()).abs() < 1e-3, "{step}");
    assert_eq!(trace_class_sum(&[0.0], 0.7), 0.7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn gronwall_bound_is_monotone_in_its_data(seed in 0u64..10_000, bump in 0.0..0.5f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_instance(&mut rng);
        let b0 = powered_gronwall_bound(&base).unwrap();
        let kappa: Vec<f64> = base.kappa.iter().map(|k| k + bump).collect();
        let g: Vec<f64> = base.g.iter().map(|v| v + bump).collect();
        let bigger = GronwallInstance::new(base.beta, base.grid.clone(), kappa, g).unwrap();
        let b1 = powered_gronwall_bound(&bigger).unwrap();
        for (a, b) in b0.values.iter().zip(&b1.values) {
            prop_assert!(b >= a);
            prop_assert!(*a >= 0.0);
        }
    }

    #[test]
    fn moment_norms_increase_with_p(xs in proptest::collection::vec(0.0..10.0f64, 4..50)) {
        let r = moment_report(&xs, &[1.0, 2.0, 4.0, 8.0]).unwrap();
        prop_assert!(r.norms.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12)));
    }
}
