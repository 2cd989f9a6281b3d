//! Two-sided boundary Wiener increments, the grid shift `θ_s`, and the
//! stationary Ornstein-Uhlenbeck field `Y`.
//!
//! Paths store increments on the global grid `t_m = m·dt`; a shift is an
//! integer offset into that array, so `W_t(θ_s ω) = W_{t+s}(ω) - W_s(ω)` and
//! `Y_{θ_t ω}(s) = Y_ω(t + s)` hold exactly on grid points.
//!
//! Modes with drift `μ - λ_k ≥ 0` have no stationary convolution; they are
//! projected out of `Y`, which therefore only carries the dissipative modes.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::{SpectralModel, StateVector};

pub const CHANNELS: usize = 2;
const MAGIC: &[u8; 8] = b"RDSPATH1";

/// Target size of the neglected memory `e^{a·window}` of the slowest stable mode.
pub const WINDOW_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    dt: f64,
    start: i64,
    increments: Vec<[f64; CHANNELS]>,
    q: [f64; CHANNELS],
    seed: u64,
    stream: u64,
}

fn grid_index(t: f64, dt: f64) -> Result<i64> {
    let x = t / dt;
    let m = x.round();
    if (x - m).abs() > 1e-7 * x.abs().max(1.0) {
        return Err(Error::OffGrid { t, dt });
    }
    Ok(m as i64)
}

impl NoisePath {
    /// Gaussian increments with variance `q_ch·dt` on `[t_minus, t_plus]`
    /// (rounded outward to the grid).
    pub fn sample(dt: f64, t_minus: f64, t_plus: f64, q: [f64; CHANNELS], seed: u64) -> Result<Self> {
        Self::sample_stream(dt, t_minus, t_plus, q, seed, 0)
    }

    /// As [`NoisePath::sample`] on an independent ChaCha stream, for ensembles.
    pub fn sample_stream(
        dt: f64,
        t_minus: f64,
        t_plus: f64,
        q: [f64; CHANNELS],
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("dt", "must be finite and positive"));
        }
        if !(t_minus.is_finite() && t_plus.is_finite() && t_minus < 0.0 && t_plus > 0.0) {
            return Err(Error::param("horizon", format!("need t_minus < 0 < t_plus, got [{t_minus}, {t_plus}]")));
        }
        if q.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::param("q", "intensities must be finite and non-negative"));
        }
        let start = snap(t_minus / dt, f64::floor);
        let end = snap(t_plus / dt, f64::ceil);
        let n = (end - start) as usize;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let scale = [(q[0] * dt).sqrt(), (q[1] * dt).sqrt()];
        let increments = (0..n)
            .map(|_| {
                let z0: f64 = StandardNormal.sample(&mut rng);
                let z1: f64 = StandardNormal.sample(&mut rng);
                [scale[0] * z0, scale[1] * z1]
            })
            .collect();
        Ok(Self { dt, start, increments, q, seed, stream })
    }

    /// Path with all increments zero (deterministic forcing).
    pub fn zero(dt: f64, t_minus: f64, t_plus: f64) -> Result<Self> {
        Self::sample(dt, t_minus, t_plus, [0.0, 0.0], 0)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn stream(&self) -> u64 {
        self.stream
    }
    pub fn q(&self) -> [f64; CHANNELS] {
        self.q
    }
    pub fn increments(&self) -> &[[f64; CHANNELS]] {
        &self.increments
    }
    /// Global index of the first grid point.
    pub fn start_index(&self) -> i64 {
        self.start
    }
    /// Global index of the last grid point.
    pub fn end_index(&self) -> i64 {
        self.start + self.increments.len() as i64
    }
    pub fn t_minus(&self) -> f64 {
        self.start as f64 * self.dt
    }
    pub fn t_plus(&self) -> f64 {
        self.end_index() as f64 * self.dt
    }

    /// Global grid index of time `t`.
    pub fn index_of(&self, t: f64) -> Result<i64> {
        grid_index(t, self.dt)
    }

    /// Increment over `[t_m, t_{m+1}]` for global index `m`.
    pub fn increment_at(&self, m: i64) -> Result<[f64; CHANNELS]> {
        let local = m - self.start;
        if local < 0 || local >= self.increments.len() as i64 {
            return Err(self.horizon_error(m as f64 * self.dt));
        }
        Ok(self.increments[local as usize])
    }

    fn horizon_error(&self, t: f64) -> Error {
        Error::OutOfHorizon { t, lo: self.t_minus(), hi: self.t_plus() }
    }

    /// Two-sided Wiener value `W(t)` with `W(0) = 0`.
    pub fn wiener(&self, t: f64) -> Result<[f64; CHANNELS]> {
        let m = self.index_of(t)?;
        if m < self.start || m > self.end_index() {
            return Err(self.horizon_error(t));
        }
        let mut w = [0.0; CHANNELS];
        if m >= 0 {
            for j in 0..m {
                let inc = self.increments[(j - self.start) as usize];
                w[0] += inc[0];
                w[1] += inc[1];
            }
        } else {
            for j in m..0 {
                let inc = self.increments[(j - self.start) as usize];
                w[0] -= inc[0];
                w[1] -= inc[1];
            }
        }
        Ok(w)
    }

    pub fn view(&self) -> ShiftView<'_> {
        ShiftView { path: self, offset: 0 }
    }

    /// `θ_s ω` as a view.
    pub fn shift(&self, s: f64) -> Result<ShiftView<'_>> {
        self.view().shift(s)
    }

    /// Path on a grid `factor` times coarser, obtained by summing increments.
    /// Fine and coarse paths are the same Brownian realization.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::param("factor", "must be positive"));
        }
        if self.start % factor as i64 != 0 || !self.increments.len().is_multiple_of(factor) {
            return Err(Error::param("factor", "horizon is not aligned with the coarse grid"));
        }
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().fold([0.0, 0.0], |acc, x| [acc[0] + x[0], acc[1] + x[1]]))
            .collect();
        Ok(Self {
            dt: self.dt * factor as f64,
            start: self.start / factor as i64,
            increments,
            q: self.q,
            seed: self.seed,
            stream: self.stream,
        })
    }

    /// Binary persistence: magic, header `(dt, start index, steps, channels,
    /// seed, stream, q)`, then little-endian increments.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.start.to_le_bytes())?;
        w.write_all(&(self.increments.len() as u64).to_le_bytes())?;
        w.write_all(&(CHANNELS as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.stream.to_le_bytes())?;
        for q in self.q {
            w.write_all(&q.to_le_bytes())?;
        }
        for inc in &self.increments {
            for x in inc {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a noise path file".into()));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let dt = f64::from_le_bytes(next(&mut r)?);
        let start = i64::from_le_bytes(next(&mut r)?);
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let channels = u64::from_le_bytes(next(&mut r)?) as usize;
        if channels != CHANNELS {
            return Err(Error::Format(format!("expected {CHANNELS} channels, found {channels}")));
        }
        let seed = u64::from_le_bytes(next(&mut r)?);
        let stream = u64::from_le_bytes(next(&mut r)?);
        let q = [f64::from_le_bytes(next(&mut r)?), f64::from_le_bytes(next(&mut r)?)];
        let mut increments = Vec::with_capacity(n);
        for _ in 0..n {
            let a = f64::from_le_bytes(next(&mut r)?);
            let b = f64::from_le_bytes(next(&mut r)?);
            increments.push([a, b]);
        }
        Ok(Self { dt, start, increments, q, seed, stream })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn snap(x: f64, round: fn(f64) -> f64) -> i64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 * x.abs().max(1.0) {
        r as i64
    } else {
        round(x) as i64
    }
}

/// Read-only window `θ_s ω` onto a path.
#[derive(Debug, Clone, Copy)]
pub struct ShiftView<'a> {
    path: &'a NoisePath,
    offset: i64,
}

impl<'a> ShiftView<'a> {
    pub fn path(&self) -> &'a NoisePath {
        self.path
    }
    pub fn dt(&self) -> f64 {
        self.path.dt
    }
    /// Offset in grid steps.
    pub fn offset_steps(&self) -> i64 {
        self.offset
    }
    pub fn offset_time(&self) -> f64 {
        self.offset as f64 * self.path.dt
    }

    /// Base-path global index of view time `t`.
    pub fn base_index(&self, t: f64) -> Result<i64> {
        let m = grid_index(t, self.path.dt)? + self.offset;
        if m < self.path.start || m > self.path.end_index() {
            return Err(Error::OutOfHorizon {
                t,
                lo: self.path.t_minus() - self.offset_time(),
                hi: self.path.t_plus() - self.offset_time(),
            });
        }
        Ok(m)
    }

    /// Compose shifts: `θ_s θ_{offset}`.
    pub fn shift(&self, s: f64) -> Result<ShiftView<'a>> {
        let m = self.base_index(s)?;
        Ok(ShiftView { path: self.path, offset: m })
    }

    /// Increment of the view over `[t_j, t_{j+1}]`, `j` in view-grid units.
    pub fn increment(&self, j: i64) -> Result<[f64; CHANNELS]> {
        self.path.increment_at(j + self.offset)
    }

    /// `W_t(θ_s ω) = W_{t+s}(ω) - W_s(ω)`.
    pub fn wiener(&self, t: f64) -> Result<[f64; CHANNELS]> {
        let s = self.offset_time();
        let a = self.path.wiener(t + s)?;
        let b = self.path.wiener(s)?;
        Ok([a[0] - b[0], a[1] - b[1]])
    }
}

/// Length of the backward memory needed so that the slowest dissipative mode
/// forgets its initial value to [`WINDOW_TOLERANCE`].
pub fn required_window(model: &SpectralModel) -> Option<f64> {
    let slowest = model.drifts().iter().copied().filter(|a| *a < 0.0).fold(f64::NEG_INFINITY, f64::max);
    if slowest.is_finite() {
        Some(WINDOW_TOLERANCE.ln() / slowest)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
struct OuStepper {
    decay: Vec<f64>,
    coupling: Vec<[f64; 2]>,
    active: Vec<bool>,
}

impl OuStepper {
    fn new(model: &SpectralModel, dt: f64) -> Self {
        Self {
            decay: model.drifts().iter().map(|a| (a * dt).exp()).collect(),
            coupling: model.coupling().to_vec(),
            active: model.drifts().iter().map(|a| *a < 0.0).collect(),
        }
    }

    #[inline]
    fn advance(&self, y: &mut [f64], inc: [f64; CHANNELS]) {
        for k in 0..y.len() {
            if self.active[k] {
                let c = self.coupling[k];
                y[k] = self.decay[k] * y[k] + (c[0] * inc[0] + c[1] * inc[1]);
            }
        }
    }
}

/// Tabulated `Y` over the whole path horizon, started from zero at `t_minus`.
#[derive(Debug, Clone)]
pub struct OuProcess {
    n_modes: usize,
    start: i64,
    dt: f64,
    values: Vec<f64>,
    drifts: Vec<f64>,
}

impl OuProcess {
    pub fn new(model: &SpectralModel, path: &NoisePath) -> Self {
        let n = model.n_modes();
        let stepper = OuStepper::new(model, path.dt());
        let len = path.increments().len() + 1;
        let mut values = vec![0.0; len * n];
        let mut y = vec![0.0; n];
        for (j, inc) in path.increments().iter().enumerate() {
            stepper.advance(&mut y, *inc);
            values[(j + 1) * n..(j + 2) * n].copy_from_slice(&y);
        }
        Self { n_modes: n, start: path.start_index(), dt: path.dt(), values, drifts: model.drifts().to_vec() }
    }

    /// `Y` at base-path global index `m`.
    pub fn at_index(&self, m: i64) -> Result<StateVector> {
        Ok(DVector::from_column_slice(self.row(m)?))
    }

    pub(crate) fn row(&self, m: i64) -> Result<&[f64]> {
        let local = m - self.start;
        let len = self.values.len() / self.n_modes;
        if local < 0 || local as usize >= len {
            return Err(Error::OutOfHorizon {
                t: m as f64 * self.dt,
                lo: self.start as f64 * self.dt,
                hi: (self.start + len as i64 - 1) as f64 * self.dt,
            });
        }
        let l = local as usize;
        Ok(&self.values[l * self.n_modes..(l + 1) * self.n_modes])
    }

    /// `Y_{view}(t)`.
    pub fn eval(&self, view: &ShiftView<'_>, t: f64) -> Result<StateVector> {
        self.at_index(view.base_index(t)?)
    }

    /// Memory left over from the truncation at `t_minus`:
    /// `max_k e^{(μ-λ_k)(t - t_minus)}` over dissipative modes.
    pub fn truncation_bound(&self, m: i64) -> f64 {
        let age = (m - self.start) as f64 * self.dt;
        self.drifts.iter().filter(|a| **a < 0.0).map(|a| (a * age).exp()).fold(0.0, f64::max)
    }
}

/// `Y_{view}(t)` by direct recursion from the start of the path; agrees
/// bit-for-bit with [`OuProcess`].
pub fn ou_eval(model: &SpectralModel, view: &ShiftView<'_>, t: f64) -> Result<StateVector> {
    let path = view.path();
    let m = view.base_index(t)?;
    ou_from(model, path, path.start_index(), m)
}

/// `Y` computed from a truncated memory window `[t - window, t]`.
pub fn ou_eval_windowed(model: &SpectralModel, view: &ShiftView<'_>, t: f64, window: f64) -> Result<StateVector> {
    let path = view.path();
    let m = view.base_index(t)?;
    let w = (window / path.dt()).round() as i64;
    let from = (m - w).max(path.start_index());
    ou_from(model, path, from, m)
}

fn ou_from(model: &SpectralModel, path: &NoisePath, from: i64, to: i64) -> Result<StateVector> {
    let stepper = OuStepper::new(model, path.dt());
    let mut y = vec![0.0; model.n_modes()];
    for j in from..to {
        stepper.advance(&mut y, path.increment_at(j)?);
    }
    Ok(DVector::from_vec(y))
}

/// `‖Y_{θ_t ω}(s) - Y_ω(t + s)‖`.
pub fn stationarity_residual(model: &SpectralModel, path: &NoisePath, s: f64, t: f64) -> Result<f64> {
    let shifted = ou_eval(model, &path.shift(t)?, s)?;
    let direct = ou_eval(model, &path.view(), t + s)?;
    Ok((shifted - direct).norm())
}
