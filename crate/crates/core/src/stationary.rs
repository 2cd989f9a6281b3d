//! Random stationary point `Z_ω` as the bounded orbit of the discrete random
//! PDE, found by Picard iteration of the variation-of-constants sums.
//!
//! Dissipative modes are summed forward from the start of a memory window,
//! expanding modes backward from the end of a look-ahead window. Modes with
//! zero drift admit no such splitting and are refused.

use nalgebra::DVector;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::cocycle::Rds;
use crate::error::{Error, Result};
use crate::noise::{ShiftView, WINDOW_TOLERANCE};
use crate::spectral::StateVector;

/// Drifts closer to zero than this count as neutral.
const NEUTRAL_DRIFT: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct StationaryOptions {
    /// Memory window behind the first requested time; derived from the
    /// slowest decay rate when `None`.
    pub window: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self { window: None, tol: 1e-12, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryPoint {
    dt: f64,
    /// Base index of view time zero.
    origin: i64,
    /// Base index of `fields[0]`.
    first: i64,
    /// Inclusive base-index range where the orbit is reported.
    valid: (i64, i64),
    #[serde(skip)]
    fields: Vec<StateVector>,
    pub window: f64,
    pub lookahead: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Sup-norm change of each Picard sweep.
    pub increments: Vec<f64>,
    /// `L·sqrt(1/a_s² + 1/a_u²)`, exact for the discrete sums.
    pub contraction_margin: f64,
    /// `L·C·Γ(1-β)|ω_A|^{β-1}` when every mode is dissipative.
    pub continuous_margin: Option<f64>,
}

impl StationaryPoint {
    /// `Z_ω` at view time zero.
    pub fn z(&self) -> Result<StateVector> {
        self.at(0.0)
    }

    /// `Z_{θ_t ω}` for on-grid `t` inside the reported range.
    pub fn at(&self, t: f64) -> Result<StateVector> {
        let x = t / self.dt;
        let k = x.round();
        if (x - k).abs() > 1e-7 * x.abs().max(1.0) {
            return Err(Error::OffGrid { t, dt: self.dt });
        }
        self.at_index(self.origin + k as i64).cloned()
    }

    /// Field at a base-path index.
    pub fn at_index(&self, m: i64) -> Result<&StateVector> {
        if m < self.valid.0 || m > self.valid.1 {
            let (lo, hi) = self.time_range();
            return Err(Error::OutOfHorizon { t: (m - self.origin) as f64 * self.dt, lo, hi });
        }
        Ok(&self.fields[(m - self.first) as usize])
    }

    /// View-time range where the orbit is available.
    pub fn time_range(&self) -> (f64, f64) {
        ((self.valid.0 - self.origin) as f64 * self.dt, (self.valid.1 - self.origin) as f64 * self.dt)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub(crate) fn origin(&self) -> i64 {
        self.origin
    }

    /// The orbit `Z ≡ 0`, valid when the noise vanishes and `g(0) = 0`.
    /// Unlike [`stationary_point`] this needs no hyperbolicity, so it serves
    /// models tuned to a zero exponent.
    pub fn deterministic_equilibrium(rds: &Rds<'_>, omega: &ShiftView<'_>, span: (f64, f64)) -> Result<Self> {
        if rds.path().increments().iter().any(|w| w[0] != 0.0 || w[1] != 0.0) {
            return Err(Error::Refused("deterministic equilibrium needs a zero noise path".into()));
        }
        let n = rds.model().n_modes();
        if rds.nonlin().apply(&DVector::zeros(n)).amax() != 0.0 {
            return Err(Error::Refused("deterministic equilibrium needs g(0) = 0".into()));
        }
        let lo = omega.base_index(span.0)?;
        let hi = omega.base_index(span.1)?;
        Ok(Self {
            dt: rds.dt(),
            origin: omega.base_index(0.0)?,
            first: lo,
            valid: (lo, hi),
            fields: vec![DVector::zeros(n); (hi - lo + 1) as usize],
            window: 0.0,
            lookahead: 0.0,
            residual: 0.0,
            iterations: 0,
            increments: Vec::new(),
            contraction_margin: 0.0,
            continuous_margin: None,
        })
    }
}

/// Stationary orbit over the view-time span `[span.0, span.1]`.
pub fn stationary_point(
    rds: &Rds<'_>,
    omega: &ShiftView<'_>,
    span: (f64, f64),
    opts: StationaryOptions,
) -> Result<StationaryPoint> {
    let model = rds.model();
    let n = model.n_modes();
    let dt = rds.dt();
    if !(span.1 >= span.0) {
        return Err(Error::param("span", "end before start"));
    }
    let drifts = model.drifts();
    if let Some(k) = drifts.iter().position(|a| a.abs() < NEUTRAL_DRIFT) {
        return Err(Error::Refused(format!(
            "mode {k} has zero drift; no exponential dichotomy for the stationary sums"
        )));
    }
    let slow_stable = drifts.iter().copied().filter(|a| *a < 0.0).fold(f64::NEG_INFINITY, f64::max);
    let slow_unstable = drifts.iter().copied().filter(|a| *a > 0.0).fold(f64::INFINITY, f64::min);
    let lip = rds.nonlin().lipschitz();
    let inv_s = if slow_stable.is_finite() { 1.0 / slow_stable.powi(2) } else { 0.0 };
    let inv_u = if slow_unstable.is_finite() { 1.0 / slow_unstable.powi(2) } else { 0.0 };
    let contraction_margin = lip * (inv_s + inv_u).sqrt();
    if contraction_margin >= 1.0 {
        return Err(Error::NonContractive { margin: contraction_margin });
    }
    let continuous_margin = (model.omega_a() < 0.0).then(|| {
        let b = model.beta();
        lip * model.frac_norm() * gamma(1.0 - b) * model.omega_a().abs().powf(b - 1.0)
    });

    let memory = |rate: f64| if rate.is_finite() { WINDOW_TOLERANCE.ln() / -rate.abs() } else { 0.0 };
    let window = opts.window.unwrap_or_else(|| memory(slow_stable));
    let lookahead = memory(slow_unstable);
    if !(window >= 0.0) {
        return Err(Error::param("window", "must be non-negative"));
    }
    let steps = |w: f64| (w / dt).ceil() as i64;
    let valid = (omega.base_index(span.0)?, omega.base_index(span.1)?);
    let first = valid.0 - steps(window);
    let last = valid.1 + steps(lookahead);
    let path = rds.path();
    if first < path.start_index() || last > path.end_index() {
        return Err(Error::OutOfHorizon {
            t: if first < path.start_index() { span.0 - window } else { span.1 + lookahead },
            lo: path.t_minus() - omega.offset_time(),
            hi: path.t_plus() - omega.offset_time(),
        });
    }
    let len = (last - first + 1) as usize;
    let ys: Vec<StateVector> = (first..=last).map(|m| rds.y_at(m)).collect::<Result<_>>()?;
    let decay = rds.decay();
    let gain = rds.gain();
    let stable: Vec<bool> = drifts.iter().map(|a| *a < 0.0).collect();

    let mut v = vec![DVector::zeros(n); len];
    let mut g = vec![DVector::zeros(n); len];
    let mut increments = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        for (gm, (vm, ym)) in g.iter_mut().zip(v.iter().zip(&ys)) {
            *gm = rds.nonlin().apply(&(vm + ym));
        }
        let mut next = vec![DVector::zeros(n); len];
        for k in 0..n {
            if stable[k] {
                for m in 0..len - 1 {
                    next[m + 1][k] = decay[k] * next[m][k] + gain[k] * g[m + 1][k];
                }
            } else {
                for m in (0..len - 1).rev() {
                    next[m][k] = (next[m + 1][k] - gain[k] * g[m + 1][k]) / decay[k];
                }
            }
        }
        let mut inc: f64 = 0.0;
        let mut size: f64 = 0.0;
        for (a, b) in next.iter().zip(&v) {
            inc = inc.max((a - b).norm());
            size = size.max(a.norm());
        }
        v = next;
        increments.push(inc);
        if inc <= opts.tol * size.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonContractive { margin: contraction_margin });
    }
    let fields = v.iter().zip(&ys).map(|(a, b)| a + b).collect();
    Ok(StationaryPoint {
        dt,
        origin: omega.base_index(0.0)?,
        first,
        valid,
        fields,
        window,
        lookahead,
        residual: *increments.last().unwrap_or(&0.0),
        iterations: increments.len(),
        increments,
        contraction_margin,
        continuous_margin,
    })
}
