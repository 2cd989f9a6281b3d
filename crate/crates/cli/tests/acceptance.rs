//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line;
//! the test then checks that exactly the known-unattainable criteria fail.
//!
//! Run with `cargo test -p rdslab-cli --test acceptance -- --nocapture` to
//! see the lines.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdslab::bounds::{
    kernel_integrability_check, powered_gronwall_bound, r_alpha, r_alpha_series, trace_class_trend, GronwallInstance,
};
use rdslab::lyapunov::{lyapunov_spectrum, BaseOrbit, LyapunovOptions};
use rdslab::noise::stationarity_residual;
use rdslab::stationary::{stationary_point, StationaryOptions};
use rdslab::variational::fd_derivative_check;
use rdslab::volterra::{graded_mesh, solve_extrapolated};
use rdslab::{NoisePath, Nonlinearity, NonlinearityKind, Rds, SpectralModel};
use rdslab_cli::config::{ExperimentConfig, Overrides};
use rdslab_cli::run_experiment;
use serde_json::Value;

// Tolerances, as stated by each criterion.
const LINEAR_REL_TOL: f64 = 0.02;
const LINEAR_ABS_TOL_NEAR_ZERO: f64 = 0.02;
const SHIFT: f64 = 0.2;
const SHIFT_TOL: f64 = 0.01;
const DEFECT_PER_DT: f64 = 10.0;
/// Halving accepted when the defect ratio is 1/2 ± 50% of 1/2.
const HALVING_RATIO: (f64, f64) = (0.25, 0.75);
const ROUNDOFF: f64 = 1e-14;
/// Mean defect below which a halving ratio is roundoff noise, not a rate.
const RESOLVABLE_DEFECT: f64 = 1e-12;
const FD_TOL: f64 = 1e-3;
const GRONWALL_ORACLE_SLACK: f64 = 1e-6;
const SPOT_SERIES: f64 = 5.64;
const SPOT_MAJORANT: f64 = 8.437;
const SPOT_TOL: f64 = 1e-3;
const CENTER_EXPONENT_TOL: f64 = 1e-2;
const TANGENCY_SLOPE_TOL: f64 = 0.05;
const RESOLVENT_TOL: f64 = 0.05;

type Verdict = (bool, String);

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn load(file: &str, set: &[&str], out: &Path) -> ExperimentConfig {
    let o = Overrides { set: set.iter().map(|s| s.to_string()).collect(), out: Some(out.into()), ..Default::default() };
    ExperimentConfig::load(Some(&configs_dir().join(file)), &o).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn linear_spectrum() -> Verdict {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::Zero, &m).unwrap();
    let p = NoisePath::sample(1e-2, -1.0, 1001.0, [1.0, 1.0], 1).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let s = lyapunov_spectrum(&rds, &p.view(), BaseOrbit::Explicit(m.zero_state()), LyapunovOptions::new(0.1, 10_000))
        .unwrap();
    let oracle: Vec<f64> = (0..8).map(|k| 0.5 - (k * k) as f64).collect();
    let near = (0..8).min_by(|&i, &j| oracle[i].abs().total_cmp(&oracle[j].abs())).unwrap();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (i, (e, o)) in s.exponents.iter().zip(&oracle).enumerate() {
        let tol = if i == near { LINEAR_ABS_TOL_NEAR_ZERO } else { LINEAR_REL_TOL * o.abs() };
        ok &= (e - o).abs() <= tol;
        worst = worst.max((e - o).abs() / tol);
    }
    (ok, format!("worst error/tolerance {worst:.3}"))
}

fn shifted_spectrum() -> Verdict {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::Linear { c: SHIFT }, &m).unwrap();
    // at dt = 1e-2 the discrete shift of the fast modes is visibly off 0.2
    let p = NoisePath::sample(1e-3, -1.0, 101.0, [1.0, 1.0], 2).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let s = lyapunov_spectrum(&rds, &p.view(), BaseOrbit::Explicit(m.zero_state()), LyapunovOptions::new(0.1, 1000))
        .unwrap();
    let worst =
        s.exponents.iter().enumerate().map(|(k, e)| (e - (0.5 - (k * k) as f64) - SHIFT).abs()).fold(0.0, f64::max);
    (worst <= SHIFT_TOL, format!("max |shift - {SHIFT}| = {worst:.2e}"))
}

fn cocycle_property() -> Verdict {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.1 }, &m).unwrap();
    let dt = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut coarse_sum, mut fine_sum) = (0.0f64, 0.0, 0.0);
    for _ in 0..100 {
        let t = rng.random_range(0..1000) as f64 * dt;
        let s = rng.random_range(0..1000) as f64 * dt;
        let seed = rng.random_range(0..1_000_000u64);
        let scale = rng.random_range(0.1..3.0);
        let xi = DVector::from_fn(8, |_, _| scale * rng.random_range(-1.0..1.0));
        let fine = NoisePath::sample(dt / 2.0, -1.0, 2.1, [1.0, 1.0], seed).unwrap();
        let coarse = fine.coarsen(2).unwrap();
        let d_coarse = Rds::new(&m, &coarse, &g).unwrap().cocycle_residual(&coarse.view(), t, s, &xi).unwrap();
        let d_fine = Rds::new(&m, &fine, &g).unwrap().cocycle_residual(&fine.view(), t, s, &xi).unwrap();
        worst = worst.max(d_coarse);
        coarse_sum += d_coarse;
        fine_sum += d_fine;
    }
    // On grid the one-step scheme composes exactly, so both defects sit at
    // roundoff and their ratio says nothing about dt.
    let ratio = fine_sum / coarse_sum;
    let bounded = worst <= DEFECT_PER_DT * dt;
    let resolvable = coarse_sum / 100.0 > RESOLVABLE_DEFECT;
    let halves = resolvable && ratio >= HALVING_RATIO.0 && ratio <= HALVING_RATIO.1;
    (
        bounded && halves,
        format!(
            "max defect {worst:.2e} (bound {:.0e}), mean defect {:.1e} vs resolvable {RESOLVABLE_DEFECT:.0e}, \
             ratio {ratio:.3}",
            DEFECT_PER_DT * dt,
            coarse_sum / 100.0
        ),
    )
}

fn stationarity() -> Verdict {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let p = NoisePath::sample(1e-2, -60.0, 60.0, [1.0, 1.0], 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut y_worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(-2000i64..2000) as f64 * 1e-2;
        let s = rng.random_range(-2000i64..2000) as f64 * 1e-2;
        y_worst = y_worst.max(stationarity_residual(&m, &p, s, t).unwrap());
    }
    let dt = 1e-3;
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.1 }, &m).unwrap();
    let mut z_worst: f64 = 0.0;
    for seed in 0..20 {
        let p = NoisePath::sample(dt, -70.0, 50.0, [1.0, 1.0], 500 + seed).unwrap();
        let rds = Rds::new(&m, &p, &g).unwrap();
        let sp = stationary_point(&rds, &p.view(), (0.0, 1.0), StationaryOptions::default()).unwrap();
        let z = sp.z().unwrap();
        for t in [0.1, 0.5, 1.0] {
            let moved = rds.cocycle_apply(&p.view(), t, &z).unwrap();
            z_worst = z_worst.max((moved - sp.at(t).unwrap()).norm());
        }
    }
    (
        y_worst <= ROUNDOFF && z_worst <= DEFECT_PER_DT * dt,
        format!("shift identity {y_worst:.1e}, invariance defect {z_worst:.2e}"),
    )
}

fn frechet_derivative() -> Verdict {
    let m = SpectralModel::build(8, 0.5, 0.5, 1.5).unwrap();
    let p = NoisePath::sample(1e-3, -40.0, 2.0, [1.0, 1.0], 31).unwrap();
    let g = Nonlinearity::new(NonlinearityKind::ScaledTanh { a: 0.1 }, &m).unwrap();
    let rds = Rds::new(&m, &p, &g).unwrap();
    let xi = DVector::from_fn(8, |k, _| 0.8 / (1.0 + k as f64));
    let r = fd_derivative_check(&rds, &p.view(), &xi, 1.0, 1e-5, 8, 4).unwrap();
    (r.directions == 8 && r.max_rel_error < FD_TOL, format!("max relative error {:.2e}", r.max_rel_error))
}

fn gronwall_machinery() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    for _ in 0..100 {
        let beta = rng.random_range(0.2..0.6);
        let grid = graded_mesh(rng.random_range(0.5..2.0), 100, 2.0);
        let mut k = rng.random_range(0.1..1.5);
        let kappa: Vec<f64> = grid
            .iter()
            .map(|_| {
                k += rng.random_range(0.0..0.02);
                k
            })
            .collect();
        let g: Vec<f64> = grid.iter().map(|_| rng.random_range(0.1..2.0)).collect();
        let inst = GronwallInstance::new(beta, grid, kappa, g).unwrap();
        let bound = powered_gronwall_bound(&inst).unwrap();
        let u = solve_extrapolated(beta, &inst.grid, 4, |t| inst.kappa_at(t), |t| inst.g_at(t)).unwrap();
        violations += bound.values.iter().zip(&u).filter(|(b, u)| **u > **b * (1.0 + GRONWALL_ORACLE_SLACK)).count();
    }
    let mut grid_failures = 0;
    for alpha in [1.0, 1.25, 1.5, 2.0, 3.0] {
        for j in 1..=8 {
            let beta = 0.1 * j as f64;
            grid_failures += usize::from(r_alpha_series(alpha, beta).unwrap() > r_alpha(alpha, beta).unwrap());
        }
    }
    let series = r_alpha_series(1.0, 0.5).unwrap();
    let majorant = r_alpha(1.0, 0.5).unwrap();
    let spot = (series - SPOT_SERIES).abs() <= SPOT_TOL && (majorant - SPOT_MAJORANT).abs() <= SPOT_TOL;
    (
        violations == 0 && grid_failures == 0 && spot,
        format!(
            "{violations} dominance violations, {grid_failures} grid failures, spot series {series:.5} \
             (stated {SPOT_SERIES}), R {majorant:.5} (stated {SPOT_MAJORANT})"
        ),
    )
}

fn ensemble_bounds() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&load("default.json", &["run.ensemble=1000"], dir.path())).unwrap();
    let r = read_json(&dir.path().join("bounds.json"));
    let failures = r["failures"].as_u64().unwrap();
    let moments = &r["b_sup_moments"];
    let finite = moments["norms"].as_array().unwrap().iter().all(|v| v.as_f64().is_some_and(f64::is_finite));
    let stable = moments["stable"].as_bool().unwrap();
    (failures == 0 && finite && stable, format!("{failures} violations over 1000 paths, moments stable: {stable}"))
}

fn manifolds() -> Verdict {
    let hyp = tempfile::tempdir().unwrap();
    run_experiment(&load("manifold.json", &[], hyp.path())).unwrap();
    let m = read_json(&hyp.path().join("manifold.json"));
    let cfg = load("manifold.json", &[], hyp.path());
    let chart =
        |kind: &str, m: &Value| m["charts"].as_array().unwrap().iter().find(|c| c["kind"] == kind).cloned().unwrap();
    let stable = chart("stable", &m);
    let unstable = chart("unstable", &m);
    let decay_ok = stable["decay"]["pass"].as_bool() == Some(true);
    let back = unstable["backward_rate"].as_f64().unwrap();
    let back_ok = back >= cfg.run.upsilon * cfg.run.t0;

    let cen = tempfile::tempdir().unwrap();
    run_experiment(&load("center.json", &[], cen.path())).unwrap();
    let c = read_json(&cen.path().join("manifold.json"));
    let center = chart("center", &c);
    let mu = center["center_exponents"][0].as_f64().unwrap();
    let slope = center["tangency_slope"].as_f64().unwrap();
    let center_ok = mu.abs() < CENTER_EXPONENT_TOL && slope.abs() < TANGENCY_SLOPE_TOL;
    (
        decay_ok && back_ok && center_ok,
        format!(
            "stable decay {} (rate {:.4} allowed {:.4}), backward rate {back:.4} per block, center exponent {mu:.1e}, \
             slope {slope:.1e}",
            if decay_ok { "ok" } else { "violated" },
            stable["decay"]["point_rate"].as_f64().unwrap_or(f64::NAN),
            stable["decay"]["allowed"].as_f64().unwrap_or(f64::NAN),
        ),
    )
}

fn kernel_analytics() -> Verdict {
    let sizes = [16, 32, 64, 128, 256];
    // qβ = 0.75 and 1.2
    let below = kernel_integrability_check(&SpectralModel::build(8, 0.0, 0.5, 1.5).unwrap(), 1.5, 1.0, &sizes).unwrap();
    let above = kernel_integrability_check(&SpectralModel::build(8, 0.0, 0.3, 1.5).unwrap(), 4.0, 1.0, &sizes).unwrap();
    let m = SpectralModel::build(64, 0.0, 0.5, 1.5).unwrap();
    let grid: Vec<f64> = (0..13).map(|i| 10f64.powf(1.0 + i as f64 / 4.0)).collect();
    let r = m.resolvent_scaling_report(&grid).unwrap();
    let fit_ok = (r.fitted_exponent - r.expected_exponent).abs() <= RESOLVENT_TOL;
    (
        below.finite && !above.finite && !above.trend.converges && fit_ok,
        format!(
            "integrable below: {}, divergent above: {}, resolvent exponent {:.3} vs {:.3} (1/p* = {:.3})",
            below.finite, !above.finite, r.fitted_exponent, r.expected_exponent, r.critical_exponent
        ),
    )
}

fn trace_class() -> Verdict {
    let sizes = [64, 128, 256, 512, 1024];
    let one = trace_class_trend(1, 1.0, &sizes).unwrap();
    let two = trace_class_trend(2, 1.0, &sizes).unwrap();
    (
        one.converges && !two.converges,
        format!("one-dimensional converges: {}, two-dimensional diverges: {}", one.converges, !two.converges),
    )
}

fn run_binary(args: &[&str], out: &Path) {
    let o = Command::new(env!("CARGO_BIN_EXE_rdslab")).args(args).arg("--out").arg(out).output().unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

/// Every file except the manifest's wall time must match byte for byte.
fn determinism() -> Verdict {
    let manifold = configs_dir().join("manifold.json");
    let manifold = manifold.to_str().unwrap();
    let runs: [&[&str]; 6] = [
        &["simulate"],
        &["lyapunov", "--set", "run.n_blocks=200"],
        &["stationary"],
        &["convergence"],
        &["certify-bounds", "--set", "run.ensemble=20"],
        &["manifold", "--config", manifold],
    ];
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for args in runs {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_binary(args, a.path());
        run_binary(args, b.path());
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            let (x, y) = (std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
            let same = if name == "manifest.json" {
                let strip = |bytes: &[u8]| {
                    let mut v: Value = serde_json::from_slice(bytes).unwrap();
                    v.as_object_mut().unwrap().remove("wall_time_s");
                    v
                };
                strip(&x) == strip(&y)
            } else {
                x == y
            };
            compared += 1;
            if !same {
                mismatched.push(format!("{}/{}", args[0], name.to_string_lossy()));
            }
        }
    }
    (mismatched.is_empty(), format!("{compared} files compared, mismatches {mismatched:?}"))
}

/// Criteria that cannot pass as stated; see the README.
const KNOWN_FAILURES: [usize; 3] = [3, 6, 9];

#[test]
fn acceptance() {
    let criteria: [(usize, fn() -> Verdict); 11] = [
        (1, linear_spectrum),
        (2, shifted_spectrum),
        (3, cocycle_property),
        (4, stationarity),
        (5, frechet_derivative),
        (6, gronwall_machinery),
        (7, ensemble_bounds),
        (8, manifolds),
        (9, kernel_analytics),
        (10, trace_class),
        (11, determinism),
    ];
    let mut failed = BTreeSet::new();
    for (n, check) in criteria {
        let (pass, detail) = check();
        println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.insert(n);
        }
    }
    assert_eq!(failed, BTreeSet::from(KNOWN_FAILURES));
}
