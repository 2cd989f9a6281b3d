//! Evaluators and numerical checks for the explicit inequalities: the
//! weakly singular Gronwall bound and its series majorant, the a priori,
//! derivative-growth and difference bounds for the cocycle, an empirical
//! Hölder modulus for the derivative, kernel integrability and the
//! trace-class mode sum.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::cocycle::Rds;
use crate::error::{Error, Result};
use crate::noise::ShiftView;
use crate::quadrature::Rule;
use crate::spectral::{least_squares_slope, SpectralModel, StateVector};
use crate::variational::linearize;

/// Hard cap on the number of series terms.
const MAX_TERMS: usize = 1_000_000;

/// `u(t) ≤ g(t) + κ(t) ∫₀ᵗ (t-s)^{-β} u(s) ds` on a grid, with `κ` and `g`
/// given by their nodal values (linear in between).
#[derive(Debug, Clone, Serialize)]
pub struct GronwallInstance {
    pub beta: f64,
    pub grid: Vec<f64>,
    pub kappa: Vec<f64>,
    pub g: Vec<f64>,
}

impl GronwallInstance {
    pub fn new(beta: f64, grid: Vec<f64>, kappa: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::param("beta", "must lie in (0, 1)"));
        }
        if grid.len() < 2 || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("grid", "must start at 0 and increase strictly"));
        }
        if kappa.len() != grid.len() || g.len() != grid.len() {
            return Err(Error::param("instance", "kappa and g need one value per grid node"));
        }
        if kappa.iter().any(|k| !(k.is_finite() && *k >= 0.0)) || kappa.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("kappa", "must be finite, non-negative and nondecreasing"));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("g", "must be finite"));
        }
        Ok(Self { beta, grid, kappa, g })
    }

    /// Piecewise-linear interpolant of the sampled `g`.
    pub fn g_at(&self, t: f64) -> f64 {
        crate::volterra::interpolate(&self.grid, &self.g, t)
    }

    pub fn kappa_at(&self, t: f64) -> f64 {
        crate::volterra::interpolate(&self.grid, &self.kappa, t)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GronwallBound {
    pub grid: Vec<f64>,
    /// May be `inf` when the bound exceeds the float range; see `ln_values`.
    pub values: Vec<f64>,
    /// Natural log of the bound (`-inf` for a zero bound).
    pub ln_values: Vec<f64>,
    /// Series terms used at each node.
    pub terms: Vec<usize>,
}

/// `r^{c-1}` moments on `[b, a] ⊂ [0, 1]`: the weights of the values at
/// `r = a` and `r = b` for a function linear in `r`.
fn hat_weights(a: f64, b: f64, c: f64) -> (f64, f64) {
    // A^c - B^c evaluated as A^c (1 - (B/A)^c) to keep precision for large c
    let diff = |p: f64| {
        if b <= 0.0 {
            a.powf(p)
        } else {
            -a.powf(p) * (p * (b / a).ln()).exp_m1()
        }
    };
    let m0 = diff(c) / c;
    let m1 = diff(c + 1.0) / (c + 1.0);
    let w_a = ((m1 - b * m0) / (a - b)).max(0.0);
    (w_a, (m0 - w_a).max(0.0))
}

/// `g(t) + Σ_{n≥1} [κ(t)Γ(1-β)]^n/Γ(n(1-β)) ∫₀ᵗ (t-s)^{n(1-β)-1} g(s) ds`
/// at every grid node, summed in log space.
pub fn powered_gronwall_bound(inst: &GronwallInstance) -> Result<GronwallBound> {
    let a = 1.0 - inst.beta;
    let ln_gamma_a = ln_gamma(a);
    let n = inst.grid.len();
    let mut values = vec![0.0; n];
    let mut ln_values = vec![f64::NEG_INFINITY; n];
    let mut terms = vec![0; n];
    values[0] = inst.g[0];
    ln_values[0] = inst.g[0].abs().ln();
    for i in 1..n {
        let t = inst.grid[i];
        let kappa = inst.kappa[i];
        // nodes in r = 1 - s/t, decreasing from 1 to 0
        let g_max = inst.g[..=i].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let r: Vec<f64> = inst.grid[..=i].iter().map(|s| 1.0 - s / t).collect();
        let base = if kappa > 0.0 { kappa.ln() + ln_gamma_a + a * t.ln() } else { f64::NEG_INFINITY };
        // running sum as sign-carrying multiples of exp(ln_max)
        let mut ln_max = f64::NEG_INFINITY;
        let mut scaled = 0.0;
        let mut prev = f64::INFINITY;
        let mut count = 0;
        if base.is_finite() {
            for k in 1..=MAX_TERMS {
                let c = k as f64 * a;
                let mut integral = 0.0;
                for j in 0..i {
                    let (wa, wb) = hat_weights(r[j], r[j + 1], c);
                    integral += wa * inst.g[j] + wb * inst.g[j + 1];
                }
                count = k;
                let ln_coeff = k as f64 * base - ln_gamma(c);
                let ln_term = ln_coeff + integral.abs().ln();
                if integral != 0.0 {
                    if ln_term > ln_max {
                        scaled = scaled * (ln_max - ln_term).exp() + integral.signum();
                        ln_max = ln_term;
                    } else {
                        scaled += integral.signum() * (ln_term - ln_max).exp();
                    }
                }
                // terms decay once k a exceeds the peak of z^k/Γ(ka); stop when
                // the bound g_max/(ka) on the remaining integrals is negligible
                let decreasing = ln_coeff < prev;
                prev = ln_coeff;
                let ln_upper = ln_coeff + (g_max / c).ln();
                let reference = ln_max.max(inst.g[i].abs().ln());
                if decreasing && (ln_upper == f64::NEG_INFINITY || ln_upper < reference + (1e-17f64).ln()) {
                    break;
                }
                if k == MAX_TERMS {
                    return Err(Error::param("kappa", "series did not converge within the term cap"));
                }
            }
        }
        terms[i] = count;
        let g = inst.g[i];
        let (v, lnv) = if ln_max == f64::NEG_INFINITY {
            (g, g.abs().ln())
        } else {
            let s = scaled * ln_max.exp();
            if s.is_finite() {
                let v = g + s;
                (v, v.abs().ln())
            } else {
                // overflowed: g is negligible next to the series
                let lnv = ln_max + scaled.abs().ln();
                (scaled.signum() * f64::INFINITY, lnv)
            }
        };
        values[i] = v;
        ln_values[i] = lnv;
    }
    Ok(GronwallBound { grid: inst.grid.clone(), values, ln_values, terms })
}

/// `(β+1)/(1-β) α^{(1+β)/(1-β)} + α^{2/(1-β)} exp(α^{1/(1-β)})/(1-β)`,
/// a majorant of the series in [`r_alpha_series`] for `α ≥ 1`.
pub fn r_alpha(alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(Error::param("alpha", format!("{alpha} below 1")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param("beta", "must lie in (0, 1)"));
    }
    let a = 1.0 - beta;
    Ok((beta + 1.0) / a * alpha.powf((1.0 + beta) / a) + alpha.powf(2.0 / a) * alpha.powf(1.0 / a).exp() / a)
}

/// `Σ_{n≥1} α^{n-1}/Γ(n(1-β))`, summed until the remaining terms fall
/// below `1e-14` relative.
pub fn r_alpha_series(alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param("alpha", "must be positive"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param("beta", "must lie in (0, 1)"));
    }
    let a = 1.0 - beta;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for n in 1..=MAX_TERMS {
        let ln_term = (n - 1) as f64 * alpha.ln() - ln_gamma(n as f64 * a);
        let term = ln_term.exp();
        sum += term;
        if ln_term < prev && term < 1e-16 * sum {
            return Ok(sum);
        }
        prev = ln_term;
    }
    Err(Error::param("alpha", "series did not converge within the term cap"))
}

/// One inequality instance.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let pass = lhs <= rhs;
        Self { name: name.into(), lhs, rhs, margin: rhs - lhs, pass }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AprioriReport {
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    /// `κ(t)` multiplying `‖ξ‖`.
    pub kappa: Vec<f64>,
    pub b: Vec<f64>,
    pub b_sup: f64,
    /// Largest `lhs - (κ‖ξ‖ + b)` over the grid (non-positive when passing).
    pub worst_excess: f64,
    pub pass: bool,
}

/// `‖φ̃ᵗ(ξ)‖ ≤ κ(t)‖ξ‖ + b(t, ω)` on the solver grid up to `t_end`.
///
/// The interior semigroup satisfies `‖T₀(r)‖ ≤ M r^{-β} e^{ω_A r}` with
/// `M = max(1, t_end^β)`, which puts the mild formulation in the
/// weakly singular Gronwall form with `κ = κ₂ M`.
pub fn apriori_bound_check(
    rds: &Rds<'_>,
    omega: &ShiftView<'_>,
    xi: &StateVector,
    t_end: f64,
) -> Result<AprioriReport> {
    let model = rds.model();
    let w = model.omega_a();
    if !(w < 0.0) {
        return Err(Error::Refused("a priori bound needs ω_A < 0".into()));
    }
    let (k1, k2) = rds.nonlin().growth();
    if !(k1.is_finite() && k2.is_finite()) {
        return Err(Error::Refused("nonlinearity has no linear-growth constants".into()));
    }
    let traj = rds.solve_random_pde(omega, xi, t_end)?;
    let beta = model.beta();
    let m = t_end.powf(beta).max(1.0);
    let times = traj.times.clone();
    let y_norm: Vec<f64> = traj.forcing.iter().map(|y| y.norm()).collect();
    let y0 = &traj.forcing[0];
    let a = 1.0 - beta;
    // ∫_{s_j}^{s_{j+1}} (t-s)^{-β} e^{ω(t-s)} (κ₁ + κ₂‖Y(s)‖) ds, majorized cellwise
    let forcing_integral = |i: usize| -> f64 {
        let t = times[i];
        (0..i)
            .map(|j| {
                let near = t - times[j + 1];
                let far = t - times[j];
                let kernel = (far.powf(a) - near.powf(a)) / a * (w * near).exp();
                kernel * (k1 + k2 * y_norm[j].max(y_norm[j + 1]))
            })
            .sum()
    };
    let n = times.len();
    let mut g_xi = vec![0.0; n];
    let mut g_b = vec![0.0; n];
    for i in 0..n {
        let t = times[i];
        let decay_y = model.semigroup_apply(t, y0)?.norm();
        let integral = m * forcing_integral(i);
        // weighted forcing e^{-ωt} a(t), split into the ‖ξ‖ part and the rest
        g_xi[i] = 1.0;
        g_b[i] = (-w * t).exp() * (decay_y + integral);
    }
    let kappa = vec![k2 * m; n];
    let bound_xi = powered_gronwall_bound(&GronwallInstance::new(beta, times.clone(), kappa.clone(), g_xi)?)?;
    let bound_b = powered_gronwall_bound(&GronwallInstance::new(beta, times.clone(), kappa, g_b)?)?;
    let mut lhs = Vec::with_capacity(n);
    let mut kap = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut worst = f64::NEG_INFINITY;
    let xi_norm = xi.norm();
    for i in 0..n {
        let ewt = (w * times[i]).exp();
        let k = ewt * bound_xi.values[i];
        let bb = ewt * bound_b.values[i] + y_norm[i];
        let l = traj.field(i).norm();
        worst = worst.max(l - (k * xi_norm + bb));
        lhs.push(l);
        kap.push(k);
        b.push(bb);
    }
    let b_sup = b.iter().copied().fold(0.0, f64::max);
    Ok(AprioriReport { times, lhs, kappa: kap, b, b_sup, worst_excess: worst, pass: worst <= 0.0 })
}

/// `M₁ = M₂ = max(1, p(0)^{-β/(1-β)})`, enough for
/// `P t e^{Pt} ≤ M P^{1/(1-β)} t exp(M P^{1/(1-β)} t)` whenever `P ≥ p(0)`.
fn growth_constant(p0: f64, beta: f64) -> f64 {
    if p0 > 0.0 {
        p0.powf(-beta / (1.0 - beta)).max(1.0)
    } else {
        1.0
    }
}

/// `‖T₀(t)‖ + M₁ P^{1/(1-β)} t exp(M₂ P^{1/(1-β)} t)`.
pub fn derivative_envelope(model: &SpectralModel, p_sup: f64, p0: f64, t: f64) -> f64 {
    let beta = model.beta();
    let m = growth_constant(p0, beta);
    let pp = p_sup.powf(1.0 / (1.0 - beta));
    model.semigroup_norm(t) + m * pp * t * (m * pp * t).exp()
}

/// `sup_{s ≤ t} p(‖φ̃ˢ(ξ)‖)` along the computed orbit.
fn orbit_sup_p(rds: &Rds<'_>, omega: &ShiftView<'_>, xi: &StateVector, t: f64) -> Result<f64> {
    let traj = rds.solve_random_pde(omega, xi, t)?;
    Ok((0..traj.times.len()).map(|i| rds.nonlin().derivative_bound(traj.field(i).norm())).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeGrowth {
    /// Spectral norm of the linearized cocycle.
    pub norm: f64,
    pub envelope: f64,
    pub p_sup: f64,
    pub pass: bool,
}

/// Spectral norm of `D_ξ φ̃ᵗ` against its growth envelope.
pub fn derivative_growth_bound(
    rds: &Rds<'_>,
    omega: &ShiftView<'_>,
    xi: &StateVector,
    t: f64,
) -> Result<DerivativeGrowth> {
    let model = rds.model();
    let p_sup = orbit_sup_p(rds, omega, xi, t)?;
    let p0 = rds.nonlin().derivative_bound(0.0);
    let envelope = derivative_envelope(model, p_sup, p0, t);
    let norm = spectral_norm(&linearize(rds, omega, xi, t)?.entries);
    Ok(DerivativeGrowth { norm, envelope, p_sup, pass: norm <= envelope })
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

/// `‖φ̃ᵗ(ξ₂) - φ̃ᵗ(ξ₁)‖ ≤ Γ̃ ‖ξ₂ - ξ₁‖` with `P̃` sampled along the segment
/// at `segments + 1` points.
pub fn difference_bound_check(
    rds: &Rds<'_>,
    omega: &ShiftView<'_>,
    xi1: &StateVector,
    xi2: &StateVector,
    t: f64,
    segments: usize,
) -> Result<BoundCheck> {
    let segments = segments.max(1);
    let mut p_sup: f64 = 0.0;
    for k in 0..=segments {
        let th = k as f64 / segments as f64;
        let x = xi2 * th + xi1 * (1.0 - th);
        p_sup = p_sup.max(orbit_sup_p(rds, omega, &x, t)?);
    }
    let p0 = rds.nonlin().derivative_bound(0.0);
    let envelope = derivative_envelope(rds.model(), p_sup, p0, t);
    let lhs = (rds.cocycle_apply(omega, t, xi2)? - rds.cocycle_apply(omega, t, xi1)?).norm();
    Ok(BoundCheck::new("difference", lhs, envelope * (xi2 - xi1).norm()))
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderReport {
    pub exponent: f64,
    pub separations: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Slope of `ln ratio` against `ln separation`.
    pub slope: f64,
    pub pass: bool,
}

/// Empirical Hölder modulus of `ξ ↦ D_ξ φ̃ᵗ` at `ξ₁`, probed in the
/// direction of `ξ₂` at the given separations. Passes when the ratio does
/// not blow up as the separation shrinks.
pub fn holder_derivative_check(
    rds: &Rds<'_>,
    omega: &ShiftView<'_>,
    xi1: &StateVector,
    xi2: &StateVector,
    t: f64,
    exponent: f64,
    separations: &[f64],
) -> Result<HolderReport> {
    if !(exponent > 0.0 && exponent <= 1.0) {
        return Err(Error::param("r", format!("{exponent} outside (0, 1]")));
    }
    if separations.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::param("separations", "must be positive"));
    }
    let gap = (xi2 - xi1).norm();
    let base = linearize(rds, omega, xi1, t)?.entries;
    if gap == 0.0 {
        return Ok(HolderReport { exponent, separations: vec![0.0], ratios: vec![0.0], slope: 0.0, pass: true });
    }
    let dir = (xi2 - xi1) / gap;
    let separations = separations.to_vec();
    let mut ratios = Vec::with_capacity(separations.len());
    for &d in &separations {
        let other = linearize(rds, omega, &(xi1 + &dir * d), t)?.entries;
        ratios.push(spectral_norm(&(other - &base)) / d.powf(exponent));
    }
    let scale = spectral_norm(&base).max(1.0);
    // differences at roundoff level carry no slope information
    let informative: Vec<usize> =
        (0..ratios.len()).filter(|&i| ratios[i] * separations[i].powf(exponent) > 1e-12 * scale).collect();
    let slope = if informative.len() >= 2 {
        let xs: Vec<f64> = informative.iter().map(|&i| separations[i].ln()).collect();
        let ys: Vec<f64> = informative.iter().map(|&i| ratios[i].ln()).collect();
        least_squares_slope(&xs, &ys)
    } else {
        0.0
    };
    Ok(HolderReport { exponent, separations, ratios, slope, pass: slope >= -0.1 })
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementTrend {
    pub sizes: Vec<usize>,
    pub values: Vec<f64>,
    /// Successive ratios of increments; below `0.75` means geometric decay.
    pub increment_ratios: Vec<f64>,
    pub converges: bool,
}

impl RefinementTrend {
    fn from_values(sizes: Vec<usize>, values: Vec<f64>) -> Self {
        let inc: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let increment_ratios: Vec<f64> = inc.windows(2).map(|w| w[1] / w[0]).collect();
        let converges = increment_ratios.last().is_some_and(|r| *r < 0.75);
        Self { sizes, values, increment_ratios, converges }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelIntegrability {
    pub q: f64,
    pub tau: f64,
    pub beta: f64,
    /// `∫₀^τ ‖K(t)‖^q dt` for the model as given.
    pub integral: f64,
    /// Change under quadrature refinement.
    pub quadrature_change: f64,
    /// Mode-count refinement of the integral.
    pub trend: RefinementTrend,
    /// `qβ < 1` and the mode refinement settles.
    pub finite: bool,
}

fn kernel_power_integral(model: &SpectralModel, q: f64, tau: f64, order: usize) -> f64 {
    // the truncated kernel is bounded; geometric panels resolve the 1/N² layer
    Rule::new(order).singular_left(0.0, tau, 0.0, 1e-14, |t| model.kernel_norm(t).powf(q))
}

/// `∫₀^τ ‖dS/dt‖^q` with quadrature and mode-count refinement. The integral
/// is declared divergent when `qβ ≥ 1` or the refinement does not settle.
pub fn kernel_integrability_check(
    model: &SpectralModel,
    q: f64,
    tau: f64,
    sizes: &[usize],
) -> Result<KernelIntegrability> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(Error::param("q", "must be at least 1"));
    }
    if !(tau >= 0.0) {
        return Err(Error::param("tau", "must be non-negative"));
    }
    let integral = kernel_power_integral(model, q, tau, 16);
    let quadrature_change = (kernel_power_integral(model, q, tau, 24) - integral).abs();
    let values = sizes
        .iter()
        .map(|&n| model.with_modes(n).map(|m| kernel_power_integral(&m, q, tau, 16)))
        .collect::<Result<Vec<_>>>()?;
    let trend = RefinementTrend::from_values(sizes.to_vec(), values);
    let beta = model.beta();
    let finite = tau == 0.0 || (q * beta < 1.0 && trend.converges);
    Ok(KernelIntegrability { q, tau, beta, integral, quadrature_change, trend, finite })
}

/// `Σ_k (1 - e^{-2λ_k τ})/(2λ_k)`, with the `λ = 0` term read as `τ`.
pub fn trace_class_sum(eigenvalues: &[f64], tau: f64) -> f64 {
    eigenvalues.iter().map(|&l| if l.abs() < 1e-300 { tau } else { -(-2.0 * l * tau).exp_m1() / (2.0 * l) }).sum()
}

/// Trace-class sum under mode-count refinement for `λ_k = k^{2/dim}`.
pub fn trace_class_trend(dim: u32, tau: f64, sizes: &[usize]) -> Result<RefinementTrend> {
    if dim == 0 {
        return Err(Error::param("dim", "must be positive"));
    }
    let p = 2.0 / dim as f64;
    let values = sizes
        .iter()
        .map(|&n| {
            let eig: Vec<f64> = (0..n).map(|k| (k as f64).powf(p)).collect();
            trace_class_sum(&eig, tau)
        })
        .collect();
    Ok(RefinementTrend::from_values(sizes.to_vec(), values))
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub p: Vec<f64>,
    /// `(E X^p)^{1/p}` over the full sample.
    pub norms: Vec<f64>,
    /// The same over the first half of the sample.
    pub half_norms: Vec<f64>,
    pub stable: bool,
}

/// Empirical `L^p` norms, called stable when finite and within 10% of the
/// half-sample estimate.
pub fn moment_report(samples: &[f64], ps: &[f64]) -> Result<MomentReport> {
    if samples.len() < 2 {
        return Err(Error::param("samples", "need at least two samples"));
    }
    let norm = |xs: &[f64], p: f64| (xs.iter().map(|x| x.abs().powf(p)).sum::<f64>() / xs.len() as f64).powf(1.0 / p);
    let half = &samples[..samples.len() / 2];
    let norms: Vec<f64> = ps.iter().map(|&p| norm(samples, p)).collect();
    let half_norms: Vec<f64> = ps.iter().map(|&p| norm(half, p)).collect();
    let stable = norms.iter().zip(&half_norms).all(|(a, b)| a.is_finite() && (a - b).abs() <= 0.1 * a.abs());
    Ok(MomentReport { p: ps.to_vec(), norms, half_norms, stable })
}

/// `Γ(1-β)`, exposed for reports.
pub fn gamma_factor(beta: f64) -> f64 {
    gamma(1.0 - beta)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CertificationReport {
    pub checks: Vec<BoundCheck>,
}

impl CertificationReport {
    pub fn push(&mut self, c: BoundCheck) {
        self.checks.push(c);
    }
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }
}
