//! Random PDE for `V = X - Y`, the nonlinear cocycle `φ̃` and the linear
//! cocycle `φ`.
//!
//! One step of length `h` is the implicit exponential Euler map
//!
//! ```text
//! V_{n+1} = e^{a h} V_n + h φ₁(a h) g(V_{n+1} + Y_{n+1}),
//! ```
//!
//! solved by Picard iteration, with `a = μ - λ_k` per mode.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{NoisePath, OuProcess, ShiftView};
use crate::nonlinearity::{Nonlinearity, NonlinearityKind};
use crate::spectral::{phi1, SpectralModel, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PicardStart {
    /// Explicit exponential Euler predictor.
    Explicit,
    /// Previous step value propagated by the linear part only.
    Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub picard_tol: f64,
    pub max_picard: usize,
    pub start: PicardStart,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { picard_tol: 1e-10, max_picard: 50, start: PicardStart::Explicit }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverStats {
    pub steps: usize,
    pub picard_total: usize,
    pub picard_max: usize,
    pub max_increment: f64,
}

/// Grid solution of the random PDE.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// View times `0, dt, ..., t`.
    pub times: Vec<f64>,
    /// `V(t_n)`.
    pub states: Vec<StateVector>,
    /// `Y_{θ_{t_n} ω}(0)`.
    pub forcing: Vec<StateVector>,
    pub stats: SolverStats,
}

impl Trajectory {
    /// Physical field `X(t_n) = V(t_n) + Y(t_n)`.
    pub fn field(&self, n: usize) -> StateVector {
        &self.states[n] + &self.forcing[n]
    }

    pub fn last_field(&self) -> StateVector {
        self.field(self.states.len() - 1)
    }
}

/// A model, a noise path and a nonlinearity: the random dynamical system.
#[derive(Debug, Clone)]
pub struct Rds<'a> {
    model: &'a SpectralModel,
    path: &'a NoisePath,
    nonlin: &'a Nonlinearity,
    ou: OuProcess,
    opts: SolverOptions,
    decay: Vec<f64>,
    gain: Vec<f64>,
}

impl<'a> Rds<'a> {
    pub fn new(model: &'a SpectralModel, path: &'a NoisePath, nonlin: &'a Nonlinearity) -> Result<Self> {
        Self::with_options(model, path, nonlin, SolverOptions::default())
    }

    pub fn with_options(
        model: &'a SpectralModel,
        path: &'a NoisePath,
        nonlin: &'a Nonlinearity,
        opts: SolverOptions,
    ) -> Result<Self> {
        let h = path.dt();
        let c = model.contraction_surrogate(h) * nonlin.lipschitz();
        if c >= 1.0 {
            return Err(Error::StepSizeFailure(format!(
                "c(dt)·L = {c:.4} >= 1 at dt = {h}; the per-step fixed point is not certified"
            )));
        }
        let decay = model.drifts().iter().map(|a| (a * h).exp()).collect();
        let gain = model.drifts().iter().map(|a| h * phi1(a * h)).collect();
        Ok(Self { model, path, nonlin, ou: OuProcess::new(model, path), opts, decay, gain })
    }

    pub fn model(&self) -> &'a SpectralModel {
        self.model
    }
    pub fn path(&self) -> &'a NoisePath {
        self.path
    }
    pub fn nonlin(&self) -> &'a Nonlinearity {
        self.nonlin
    }
    pub fn ou(&self) -> &OuProcess {
        &self.ou
    }
    pub fn dt(&self) -> f64 {
        self.path.dt()
    }
    pub fn options(&self) -> SolverOptions {
        self.opts
    }

    /// `θ_s ω` of the underlying path.
    pub fn view(&self, s: f64) -> Result<ShiftView<'a>> {
        self.path.shift(s)
    }

    pub(crate) fn decay(&self) -> &[f64] {
        &self.decay
    }
    pub(crate) fn gain(&self) -> &[f64] {
        &self.gain
    }

    pub(crate) fn y_at(&self, m: i64) -> Result<StateVector> {
        self.ou.at_index(m)
    }

    fn steps_for(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) {
            return Err(Error::param("t", format!("need t >= 0, got {t}")));
        }
        let x = t / self.dt();
        let n = x.round();
        if (x - n).abs() > 1e-7 * x.max(1.0) {
            return Err(Error::OffGrid { t, dt: self.dt() });
        }
        Ok(n as usize)
    }

    /// One implicit step from `v` with the forcing `y_next` at the new time.
    /// Returns the new state and the number of Picard sweeps.
    pub(crate) fn step(
        &self,
        v: &StateVector,
        y_now: &StateVector,
        y_next: &StateVector,
    ) -> Result<(StateVector, usize, f64)> {
        let n = v.len();
        let linear = DVector::from_iterator(n, v.iter().zip(&self.decay).map(|(x, d)| d * x));
        match self.nonlin.kind() {
            NonlinearityKind::Zero => return Ok((linear, 0, 0.0)),
            NonlinearityKind::Linear { c } => {
                // closed-form fixed point of the scalar implicit relation
                let out = DVector::from_iterator(
                    n,
                    (0..n).map(|k| (linear[k] + self.gain[k] * c * y_next[k]) / (1.0 - self.gain[k] * c)),
                );
                return Ok((out, 0, 0.0));
            }
            _ => {}
        }
        let mut current = match self.opts.start {
            PicardStart::Explicit => {
                let g = self.nonlin.apply(&(v + y_now));
                &linear + g.component_mul(&DVector::from_column_slice(&self.gain))
            }
            PicardStart::Linear => linear.clone(),
        };
        let gain = DVector::from_column_slice(&self.gain);
        for it in 1..=self.opts.max_picard {
            let g = self.nonlin.apply(&(&current + y_next));
            let next = &linear + g.component_mul(&gain);
            let inc = (&next - &current).norm();
            current = next;
            if inc <= self.opts.picard_tol * current.norm().max(1.0) {
                return Ok((current, it, inc));
            }
        }
        Err(Error::StepSizeFailure(format!(
            "Picard iteration did not reach {} in {} sweeps",
            self.opts.picard_tol, self.opts.max_picard
        )))
    }

    /// Integrate `V` from `V(0) = xi - Y(0)` over `[0, t]` on the view,
    /// calling `visit(n, V_n, Y_n)` at every grid point.
    pub(crate) fn integrate<F>(
        &self,
        omega: &ShiftView<'_>,
        xi: &StateVector,
        t: f64,
        mut visit: F,
    ) -> Result<SolverStats>
    where
        F: FnMut(usize, &StateVector, &StateVector),
    {
        if xi.len() != self.model.n_modes() {
            return Err(Error::param("xi", "dimension mismatch"));
        }
        let steps = self.steps_for(t)?;
        let m0 = omega.base_index(0.0)?;
        omega.base_index(t)?;
        let mut y = self.y_at(m0)?;
        let mut v = xi - &y;
        let mut stats = SolverStats::default();
        visit(0, &v, &y);
        for n in 0..steps {
            let y_next = self.y_at(m0 + n as i64 + 1)?;
            let (v_next, its, inc) = self.step(&v, &y, &y_next)?;
            stats.steps += 1;
            stats.picard_total += its;
            stats.picard_max = stats.picard_max.max(its);
            stats.max_increment = stats.max_increment.max(inc);
            v = v_next;
            y = y_next;
            visit(n + 1, &v, &y);
        }
        Ok(stats)
    }

    pub fn solve_random_pde(&self, omega: &ShiftView<'_>, xi: &StateVector, t: f64) -> Result<Trajectory> {
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut forcing = Vec::new();
        let dt = self.dt();
        let stats = self.integrate(omega, xi, t, |n, v, y| {
            times.push(n as f64 * dt);
            states.push(v.clone());
            forcing.push(y.clone());
        })?;
        Ok(Trajectory { times, states, forcing, stats })
    }

    /// `φ̃ᵗ_ω(ξ) = V(t) + Y_{θ_t ω}(0)`.
    pub fn cocycle_apply(&self, omega: &ShiftView<'_>, t: f64, xi: &StateVector) -> Result<StateVector> {
        let mut out = xi.clone();
        self.integrate(omega, xi, t, |_, v, y| {
            out = v + y;
        })?;
        Ok(out)
    }

    /// `φᵗ_ω(ξ) = T(t)ξ - T(t)Y_ω(0) + Y_{θ_t ω}(0)`.
    pub fn linear_cocycle_apply(&self, omega: &ShiftView<'_>, t: f64, xi: &StateVector) -> Result<StateVector> {
        self.steps_for(t)?;
        let y0 = self.y_at(omega.base_index(0.0)?)?;
        let yt = self.y_at(omega.base_index(t)?)?;
        let prop = self.model.semigroup_apply(t, &(xi - &y0))?;
        Ok(prop + yt)
    }

    /// `‖φ̃^{t+s}_ω(ξ) - φ̃^s_{θ_t ω}(φ̃^t_ω(ξ))‖`.
    pub fn cocycle_residual(&self, omega: &ShiftView<'_>, t: f64, s: f64, xi: &StateVector) -> Result<f64> {
        let direct = self.cocycle_apply(omega, t + s, xi)?;
        let first = self.cocycle_apply(omega, t, xi)?;
        let second = self.cocycle_apply(&omega.shift(t)?, s, &first)?;
        Ok((direct - second).norm())
    }

    /// Linear counterpart of [`Rds::cocycle_residual`].
    pub fn linear_cocycle_residual(&self, omega: &ShiftView<'_>, t: f64, s: f64, xi: &StateVector) -> Result<f64> {
        let direct = self.linear_cocycle_apply(omega, t + s, xi)?;
        let first = self.linear_cocycle_apply(omega, t, xi)?;
        let second = self.linear_cocycle_apply(&omega.shift(t)?, s, &first)?;
        Ok((direct - second).norm())
    }
}
