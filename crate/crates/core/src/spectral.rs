//! Truncated spectral representation of the Neumann heat operator on `(0, π)`
//! with boundary forcing at the two endpoints.
//!
//! Interior states are coefficient vectors in the orthonormal cosine basis
//! `e_0 = 1/√π`, `e_k = √(2/π) cos(kx)`; the drift of mode `k` is
//! `a_k = μ - λ_k` with `λ_k = k² + reg_shift`.
//!
//! A boundary flux `b = (g₀, g_π)` enters mode `k` through the trace values of
//! the eigenfunction (Green's identity), `n_k(b) = g₀ e_k(0) + g_π e_k(π)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::Rule;

pub type StateVector = DVector<f64>;

/// Critical resolvent exponent of the Neumann trace problem in one dimension.
pub const P_STAR: f64 = 4.0 / 3.0;

/// Lower end of the admissible `β` window, `1 - 1/p*`.
pub const BETA_MIN: f64 = 1.0 - 1.0 / P_STAR;

/// Flux pair on the two boundary points `{0, π}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDatum {
    pub g0: f64,
    pub g_pi: f64,
}

impl BoundaryDatum {
    pub fn new(g0: f64, g_pi: f64) -> Self {
        Self { g0, g_pi }
    }
}

/// JSON-facing model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_modes: usize,
    pub mu: f64,
    pub beta: f64,
    pub q_star: f64,
    #[serde(default)]
    pub reg_shift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralModel {
    n_modes: usize,
    eigenvalues: Vec<f64>,
    drifts: Vec<f64>,
    mu: f64,
    beta: f64,
    p_star: f64,
    q_star: f64,
    reg_shift: f64,
    omega_a: f64,
    coupling: Vec<[f64; 2]>,
    frac_norm: f64,
}

/// `(e^z - 1)/z`, continuous at zero.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// Value of the `k`-th Neumann eigenfunction at `x`.
pub fn eigenfunction(k: usize, x: f64) -> f64 {
    if k == 0 {
        1.0 / PI.sqrt()
    } else {
        (2.0 / PI).sqrt() * (k as f64 * x).cos()
    }
}

impl SpectralModel {
    /// Canonical model with `λ_k = k²`.
    pub fn build(n_modes: usize, mu: f64, beta: f64, q_star: f64) -> Result<Self> {
        Self::from_config(&ModelConfig { n_modes, mu, beta, q_star, reg_shift: 0.0 })
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        if cfg.n_modes < 2 {
            return Err(Error::param("n_modes", format!("need at least 2 modes, got {}", cfg.n_modes)));
        }
        if !cfg.mu.is_finite() {
            return Err(Error::param("mu", "must be finite"));
        }
        if !(cfg.beta > BETA_MIN && cfg.beta < 1.0) {
            return Err(Error::param("beta", format!("{} outside the open interval (1/4, 1)", cfg.beta)));
        }
        let q_max = 1.0 / (1.0 - 1.0 / P_STAR);
        if !(cfg.q_star >= 1.0 && cfg.q_star < q_max) {
            return Err(Error::param("q_star", format!("{} outside [1, {q_max})", cfg.q_star)));
        }
        if cfg.q_star * cfg.beta >= 1.0 {
            return Err(Error::param("q_star", format!("q_star * beta = {} must stay below 1", cfg.q_star * cfg.beta)));
        }
        if !(cfg.reg_shift.is_finite() && cfg.reg_shift >= 0.0) {
            return Err(Error::param("reg_shift", "must be finite and non-negative"));
        }
        let n = cfg.n_modes;
        let eigenvalues: Vec<f64> = (0..n).map(|k| (k * k) as f64 + cfg.reg_shift).collect();
        let drifts = eigenvalues.iter().map(|l| cfg.mu - l).collect();
        let coupling = (0..n).map(|k| [eigenfunction(k, 0.0), eigenfunction(k, PI)]).collect();
        let mut model = Self {
            n_modes: n,
            omega_a: cfg.mu - eigenvalues[0],
            eigenvalues,
            drifts,
            mu: cfg.mu,
            beta: cfg.beta,
            p_star: P_STAR,
            q_star: cfg.q_star,
            reg_shift: cfg.reg_shift,
            coupling,
            frac_norm: 1.0,
        };
        model.frac_norm = model.estimate_frac_norm();
        Ok(model)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    /// Per-mode drift `μ - λ_k`.
    pub fn drifts(&self) -> &[f64] {
        &self.drifts
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn p_star(&self) -> f64 {
        self.p_star
    }
    pub fn q_star(&self) -> f64 {
        self.q_star
    }
    pub fn reg_shift(&self) -> f64 {
        self.reg_shift
    }
    /// Growth bound `μ - λ_min` of the interior semigroup.
    pub fn omega_a(&self) -> f64 {
        self.omega_a
    }
    /// Trace coefficients `(e_k(0), e_k(π))` per mode.
    pub fn coupling(&self) -> &[[f64; 2]] {
        &self.coupling
    }
    /// Constant `C` with `‖(d/dt)S(t)‖ ≤ C t^{-β} e^{ω_A t}` on `(0, 1]`,
    /// covering both the boundary kernel and the interior semigroup.
    pub fn frac_norm(&self) -> f64 {
        self.frac_norm
    }

    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            n_modes: self.n_modes,
            mu: self.mu,
            beta: self.beta,
            q_star: self.q_star,
            reg_shift: self.reg_shift,
        }
    }

    /// Same parameters with a different truncation level.
    pub fn with_modes(&self, n_modes: usize) -> Result<Self> {
        Self::from_config(&ModelConfig { n_modes, ..self.to_config() })
    }

    pub fn zero_state(&self) -> StateVector {
        DVector::zeros(self.n_modes)
    }

    pub fn unit_mode(&self, k: usize) -> StateVector {
        let mut v = self.zero_state();
        v[k] = 1.0;
        v
    }

    /// Mode coupling of a boundary datum, `n_k(b)`.
    pub fn boundary_coupling(&self, b: BoundaryDatum) -> StateVector {
        DVector::from_iterator(self.n_modes, self.coupling.iter().map(|c| c[0] * b.g0 + c[1] * b.g_pi))
    }

    fn check_len(&self, v: &StateVector) -> Result<()> {
        if v.len() != self.n_modes {
            return Err(Error::param("state", format!("length {} != n_modes {}", v.len(), self.n_modes)));
        }
        Ok(())
    }

    pub fn semigroup_apply(&self, t: f64, v: &StateVector) -> Result<StateVector> {
        if !(t >= 0.0) {
            return Err(Error::param("t", format!("semigroup needs t >= 0, got {t}")));
        }
        self.check_len(v)?;
        Ok(DVector::from_iterator(self.n_modes, v.iter().zip(&self.drifts).map(|(x, a)| x * (a * t).exp())))
    }

    /// Operator norm of the interior semigroup, `e^{ω_A t}`.
    pub fn semigroup_norm(&self, t: f64) -> f64 {
        self.drifts.iter().map(|a| (a * t).exp()).fold(0.0, f64::max)
    }

    pub fn fractional_scale(&self, exponent: f64, v: &StateVector) -> Result<StateVector> {
        self.check_len(v)?;
        if exponent == 0.0 {
            return Ok(v.clone());
        }
        let mut out = v.clone();
        for (k, x) in out.iter_mut().enumerate() {
            let base = self.eigenvalues[k] - self.mu;
            if exponent < 0.0 && base <= 0.0 {
                return Err(Error::SingularOperator(format!(
                    "mode {k}: λ_k - μ = {base} is not positive, negative power undefined"
                )));
            }
            if base < 0.0 && exponent.fract() != 0.0 {
                return Err(Error::SingularOperator(format!("mode {k}: fractional power of negative value {base}")));
            }
            *x *= base.powf(exponent);
        }
        Ok(out)
    }

    /// Boundary-to-interior kernel `(d/dt)S(t)` applied to a flux pair.
    pub fn isg_kernel_apply(&self, t: f64, b: BoundaryDatum) -> Result<StateVector> {
        if !(t > 0.0) {
            return Err(Error::param("t", format!("kernel is singular at t <= 0, got {t}")));
        }
        let n = self.boundary_coupling(b);
        Ok(DVector::from_iterator(self.n_modes, n.iter().zip(&self.drifts).map(|(c, a)| c * (a * t).exp())))
    }

    /// Operator norm of the kernel from the boundary plane into the interior.
    pub fn kernel_norm(&self, t: f64) -> f64 {
        let weights: Vec<f64> = self.drifts.iter().map(|a| (2.0 * a * t).exp()).collect();
        self.gram_norm(&weights)
    }

    /// `sqrt(λ_max(Σ_k w_k c_k c_kᵀ))` for the 2x2 Gram matrix of the couplings.
    fn gram_norm(&self, weights: &[f64]) -> f64 {
        let (mut g00, mut g01, mut g11) = (0.0, 0.0, 0.0);
        for (c, w) in self.coupling.iter().zip(weights) {
            g00 += w * c[0] * c[0];
            g01 += w * c[0] * c[1];
            g11 += w * c[1] * c[1];
        }
        let tr = 0.5 * (g00 + g11);
        let det = g00 * g11 - g01 * g01;
        (tr + (tr * tr - det).max(0.0).sqrt()).max(0.0).sqrt()
    }

    fn estimate_frac_norm(&self) -> f64 {
        // log-spaced scan of t^β e^{-ω_A t} ‖K(t)‖ over (0, 1]
        let mut best: f64 = 1.0;
        let samples = 400;
        for i in 0..=samples {
            let t = 10f64.powf(-10.0 + 10.0 * i as f64 / samples as f64);
            let v = t.powf(self.beta) * (-self.omega_a * t).exp() * self.kernel_norm(t);
            best = best.max(v);
        }
        // small safety factor for the discrete scan
        best * 1.01
    }

    /// Surrogate contraction constant `c(τ) = C τ^{1-β}/(1-β)` of the mild
    /// formulation over a step of length `τ`.
    pub fn contraction_surrogate(&self, tau: f64) -> f64 {
        self.frac_norm * tau.powf(1.0 - self.beta) / (1.0 - self.beta)
    }

    fn integrated_coefficients(&self, t: f64, nu: f64, x: &StateVector) -> Result<StateVector> {
        if !(t >= 0.0) {
            return Err(Error::param("t", format!("need t >= 0, got {t}")));
        }
        if !(nu > self.omega_a) || !nu.is_finite() {
            return Err(Error::param("nu", format!("need nu > ω_A = {}, got {nu}", self.omega_a)));
        }
        let out = x.iter().zip(&self.drifts).map(|(xk, &a)| {
            let resolvent = xk / (nu - a);
            let integral = t * phi1(a * t);
            nu * integral * resolvent + (1.0 - (a * t).exp()) * resolvent
        });
        Ok(DVector::from_iterator(self.n_modes, out))
    }

    /// `S(t)x = ν∫₀ᵗ T(s)R(ν,A)x ds + [I - T(t)]R(ν,A)x` for interior `x`.
    pub fn integrated_semigroup(&self, t: f64, nu: f64, x: &StateVector) -> Result<StateVector> {
        self.check_len(x)?;
        self.integrated_coefficients(t, nu, x)
    }

    /// Integrated semigroup applied to boundary data (the step response to a
    /// constant flux switched on at time zero).
    pub fn integrated_semigroup_boundary(&self, t: f64, nu: f64, b: BoundaryDatum) -> Result<StateVector> {
        self.integrated_coefficients(t, nu, &self.boundary_coupling(b))
    }

    /// Resolvent on boundary inputs, as an `N x 2` matrix, from the Laplace
    /// transform of the kernel evaluated by graded quadrature.
    pub fn resolvent_boundary(&self, lambda: f64) -> Result<DMatrix<f64>> {
        if !(lambda > self.omega_a) {
            return Err(Error::param("lambda", format!("need lambda > ω_A, got {lambda}")));
        }
        let rule = Rule::new(16);
        let slowest = lambda - self.omega_a;
        let horizon = 60.0 / slowest;
        let mut m = DMatrix::zeros(self.n_modes, 2);
        for (k, (&a, c)) in self.drifts.iter().zip(&self.coupling).enumerate() {
            let rate = a - lambda;
            let integral = rule.singular_left(0.0, horizon, 0.0, 1e-16, |t| (rate * t).exp());
            m[(k, 0)] = c[0] * integral;
            m[(k, 1)] = c[1] * integral;
        }
        Ok(m)
    }

    pub fn resolvent_scaling_report(&self, lambda_grid: &[f64]) -> Result<ResolventReport> {
        if lambda_grid.len() < 2 {
            return Err(Error::param("lambda_grid", "need at least two points"));
        }
        if lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::param("lambda_grid", "entries must be positive"));
        }
        if lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("lambda_grid", "must be strictly increasing"));
        }
        let mut boundary_norms = Vec::with_capacity(lambda_grid.len());
        let mut interior_norms = Vec::with_capacity(lambda_grid.len());
        for &l in lambda_grid {
            let r = self.resolvent_boundary(l)?;
            boundary_norms.push(r.svd(false, false).singular_values.max());
            interior_norms.push(1.0 / (l - self.omega_a));
        }
        let xs: Vec<f64> = lambda_grid.iter().map(|l| l.ln()).collect();
        let ys: Vec<f64> = boundary_norms.iter().map(|r| r.ln()).collect();
        let slope = least_squares_slope(&xs, &ys);
        Ok(ResolventReport {
            lambdas: lambda_grid.to_vec(),
            boundary_norms,
            interior_norms,
            fitted_exponent: -slope,
            expected_exponent: 1.0 - self.beta,
            critical_exponent: 1.0 / self.p_star,
        })
    }
}

/// Decay of the boundary resolvent along a real grid.
#[derive(Debug, Clone, Serialize)]
pub struct ResolventReport {
    pub lambdas: Vec<f64>,
    pub boundary_norms: Vec<f64>,
    pub interior_norms: Vec<f64>,
    /// `-d log‖R(λ)‖ / d log λ` by least squares.
    pub fitted_exponent: f64,
    /// `1 - β`, the rate implied by a pure `t^{-β}` kernel singularity.
    pub expected_exponent: f64,
    /// `1/p*`, the rate of the trace resolvent estimate.
    pub critical_exponent: f64,
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_spectrum() {
        let m = SpectralModel::build(8, 0.0, 0.5, 1.5).unwrap();
        assert_eq!(m.eigenvalues(), &[0.0, 1.0, 4.0, 9.0, 16.0, 25.0, 36.0, 49.0]);
        assert_eq!(m.omega_a(), 0.0);
        let m = SpectralModel::build(4, 0.5, 0.3, 2.0).unwrap();
        assert_eq!(m.omega_a(), 0.5);
        assert!(SpectralModel::build(8, 0.0, 0.2, 1.5).is_err());
        assert!(SpectralModel::build(8, 0.0, 0.5, 2.0).is_err());
        assert!(SpectralModel::build(1, 0.0, 0.5, 1.5).is_err());
    }

    #[test]
    fn fractional_scale_examples() {
        // μ = -3 gives λ - μ = (3, 4, 7)
        let m = SpectralModel::build(3, -3.0, 0.5, 1.5).unwrap();
        let v = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        let out = m.fractional_scale(-0.5, &v).unwrap();
        assert_eq!(out[1], 0.5);
        assert!((out[2] - 7f64.powf(-0.5)).abs() < 1e-15);
        let back = m.fractional_scale(0.5, &out).unwrap();
        assert!((back - &v).amax() < 1e-14);
        let m0 = SpectralModel::build(3, 0.0, 0.5, 1.5).unwrap();
        assert!(matches!(m0.fractional_scale(-0.5, &v), Err(Error::SingularOperator(_))));
        assert_eq!(m0.fractional_scale(0.0, &v).unwrap(), v);
    }

    #[test]
    fn phi1_is_smooth_at_zero() {
        assert!((phi1(1e-7) - (1e-7f64).exp_m1() / 1e-7).abs() < 1e-14);
        assert!((phi1(-2.0) - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
    }
}
