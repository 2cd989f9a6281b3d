//! Local stable, unstable and center charts around a stationary orbit by a
//! discrete Lyapunov-Perron iteration on the block grid `n·t0`.
//!
//! Perturbations `x_n = X_n - Z_n` are written in a moving frame
//! `W_n = [U_n | C_n | S_n]` whose blocks are carried into each other by the
//! linearized cocycle. With `D_n` the block-diagonal part of
//! `W_{n+1}^{-1} A_n W_n` and the remainder
//! `k_n(y) = W_{n+1}^{-1}(φ̃^{t0}(Z_n + W_n y) - Z_{n+1}) - D_n y`,
//! every fixed point of the sums below is an exact orbit of the cocycle.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cocycle::Rds;
use crate::error::{Error, Result};
use crate::linalg::{hstack, intersection, inverse, principal_angle, qr_signed};
use crate::lyapunov::{steps_per_block, Class, LyapunovSpectrum};
use crate::noise::ShiftView;
use crate::spectral::StateVector;
use crate::stationary::StationaryPoint;
use crate::variational::StepLinearizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Stable,
    Unstable,
    Center,
}

#[derive(Debug, Clone, Copy)]
pub struct ChartOptions {
    pub t0: f64,
    /// Rate of the exponential weight.
    pub upsilon: f64,
    /// Half-width of the coordinate cube sampled in the tangent space.
    pub radius: f64,
    /// Length of the one-sided orbit segment, in blocks.
    pub horizon_blocks: usize,
    /// Blocks spent aligning the moving frame before it is used.
    pub transient_blocks: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub min_radius: f64,
    /// Bound on the weighted orbit norm relative to the initial offset.
    pub weight_bound: f64,
}

impl ChartOptions {
    pub fn new(t0: f64, upsilon: f64, radius: f64) -> Self {
        Self {
            t0,
            upsilon,
            radius,
            horizon_blocks: 120,
            transient_blocks: 80,
            tol: 1e-12,
            max_iter: 60,
            min_radius: 1e-6,
            weight_bound: 100.0,
        }
    }

    /// View-time span of the stationary orbit the builder needs for charts
    /// based at blocks `first..=last`.
    pub fn orbit_span(&self, first: i64, last: i64) -> (f64, f64) {
        let pad = (self.horizon_blocks + self.transient_blocks) as i64 + 1;
        ((first - pad) as f64 * self.t0, (last + pad) as f64 * self.t0)
    }
}

/// Dimensions `(unstable, center, stable)`.
pub fn split_dims(spectrum: &LyapunovSpectrum) -> (usize, usize, usize) {
    let mut d = (0, 0, 0);
    for g in &spectrum.groups {
        match g.class {
            Class::Unstable => d.0 += g.multiplicity,
            Class::Center => d.1 += g.multiplicity,
            Class::Stable => d.2 += g.multiplicity,
        }
    }
    d
}

/// Moving frame and block-diagonal cocycle on `[lo, hi]`.
#[derive(Debug, Clone)]
struct Frame {
    lo: i64,
    w: Vec<DMatrix<f64>>,
    w_inv: Vec<DMatrix<f64>>,
    /// Full `W_{n+1}^{-1} A_n W_n`.
    b: Vec<DMatrix<f64>>,
    dims: (usize, usize, usize),
}

impl Frame {
    fn idx(&self, n: i64) -> usize {
        (n - self.lo) as usize
    }
    fn ranges(&self) -> [(usize, usize); 3] {
        let (du, dc, ds) = self.dims;
        [(0, du), (du, dc), (du + dc, ds)]
    }
    /// Off-diagonal mass of the coordinate cocycle, a check on the frame.
    fn coupling(&self) -> f64 {
        let r = self.ranges();
        let mut worst: f64 = 0.0;
        for b in &self.b {
            for (i, ri) in r.iter().enumerate() {
                for (j, rj) in r.iter().enumerate() {
                    if i != j && ri.1 > 0 && rj.1 > 0 {
                        worst = worst.max(b.view((ri.0, rj.0), (ri.1, rj.1)).amax());
                    }
                }
            }
        }
        worst
    }
}

/// Shared state for chart construction along one stationary orbit.
pub struct ChartBuilder<'r, 'a, 's> {
    rds: &'r Rds<'a>,
    omega: ShiftView<'a>,
    orbit: &'s StationaryPoint,
    opts: ChartOptions,
    frame: Frame,
    spb: usize,
}

/// Orbit segment in frame coordinates.
#[derive(Debug, Clone)]
struct Segment {
    first: i64,
    ys: Vec<DVector<f64>>,
    iterations: usize,
    weighted_sup: f64,
}

impl<'r, 'a, 's> ChartBuilder<'r, 'a, 's> {
    /// Frame for charts based at blocks `first..=last`, with dimensions taken
    /// from the spectrum classification.
    pub fn new(
        rds: &'r Rds<'a>,
        omega: ShiftView<'a>,
        orbit: &'s StationaryPoint,
        spectrum: &LyapunovSpectrum,
        opts: ChartOptions,
        first: i64,
        last: i64,
    ) -> Result<Self> {
        let dims = split_dims(spectrum);
        Self::with_dims(rds, omega, orbit, dims, opts, first, last)
    }

    pub fn with_dims(
        rds: &'r Rds<'a>,
        omega: ShiftView<'a>,
        orbit: &'s StationaryPoint,
        dims: (usize, usize, usize),
        opts: ChartOptions,
        first: i64,
        last: i64,
    ) -> Result<Self> {
        let n = rds.model().n_modes();
        if dims.0 + dims.1 + dims.2 != n {
            return Err(Error::param("dims", "split dimensions must add up to the state dimension"));
        }
        if !(opts.upsilon > 0.0) || !(opts.radius > 0.0) {
            return Err(Error::param("chart", "upsilon and radius must be positive"));
        }
        let spb = steps_per_block(rds, opts.t0)?;
        let l = opts.horizon_blocks as i64;
        let t = opts.transient_blocks as i64;
        let lo = first - l;
        let hi = last + l;
        let lin = StepLinearizer::new(rds)?;
        let origin = omega.base_index(0.0)?;
        let block = |k: i64| -> Result<DMatrix<f64>> {
            let start = origin + k * spb as i64;
            let fields: Vec<StateVector> =
                (start..=start + spb as i64).map(|m| orbit.at_index(m).cloned()).collect::<Result<_>>()?;
            lin.block(&fields)
        };
        let a: Vec<DMatrix<f64>> = (lo - t..hi + t).map(block).collect::<Result<_>>()?;
        let at = |k: i64| &a[(k - (lo - t)) as usize];

        // forward subspace iteration from the past, generic start
        let mut q = DMatrix::from_fn(n, n, |i, j| 1.0 / (1.0 + (i + 2 * j) as f64) + if i == j { 1.0 } else { 0.0 });
        q = qr_signed(q).0;
        let mut forward = Vec::with_capacity((hi - lo + 1) as usize);
        for k in lo - t..=hi {
            if k >= lo {
                forward.push(q.clone());
            }
            if k < hi {
                q = qr_signed(at(k) * &q).0;
            }
        }
        // adjoint iteration from the future
        let mut p = DMatrix::from_fn(n, n, |i, j| 1.0 / (1.0 + (2 * i + j) as f64) + if i == j { 1.0 } else { 0.0 });
        p = qr_signed(p).0;
        let mut backward = vec![DMatrix::zeros(n, n); (hi - lo + 1) as usize];
        for k in (lo..hi + t).rev() {
            p = qr_signed(at(k).transpose() * &p).0;
            if k <= hi {
                backward[(k - lo) as usize] = p.clone();
            }
        }
        let (du, dc, ds) = dims;
        let mut w = Vec::with_capacity(forward.len());
        let mut w_inv = Vec::with_capacity(forward.len());
        for (qk, pk) in forward.iter().zip(&backward) {
            let u = qk.columns(0, du).into_owned();
            let c = intersection(&qk.columns(0, du + dc).into_owned(), &pk.columns(du, n - du).into_owned(), dc);
            let s = pk.columns(du + dc, ds).into_owned();
            let wk = hstack(&[&u, &c, &s]);
            w_inv.push(inverse(&wk, "chart frame")?);
            w.push(wk);
        }
        let b = (lo..hi)
            .map(|k| {
                let i = (k - lo) as usize;
                &w_inv[i + 1] * at(k) * &w[i]
            })
            .collect();
        Ok(Self { rds, omega, orbit, opts, frame: Frame { lo, w, w_inv, b, dims }, spb })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.frame.dims
    }

    pub fn options(&self) -> ChartOptions {
        self.opts
    }

    /// Largest off-diagonal block of the frame cocycle.
    pub fn frame_coupling(&self) -> f64 {
        self.frame.coupling()
    }

    fn z(&self, n: i64) -> Result<&StateVector> {
        self.orbit.at_index(self.orbit.origin() + n * self.spb as i64)
    }

    /// `k_n(y)`, with `y` first retracted onto the ball of radius `cutoff`
    /// in the physical norm when given.
    fn remainder(&self, n: i64, y: &DVector<f64>, cutoff: Option<f64>) -> Result<DVector<f64>> {
        let i = self.frame.idx(n);
        let mut y = y.clone();
        if let Some(delta) = cutoff {
            let size = (&self.frame.w[i] * &y).norm();
            if size > delta {
                y *= delta / size;
            }
        }
        let x = self.z(n)? + &self.frame.w[i] * &y;
        let view = self.omega.shift(n as f64 * self.opts.t0)?;
        let image = self.rds.cocycle_apply(&view, self.opts.t0, &x)?;
        let lin = self.block_diag_apply(n, &y);
        Ok(&self.frame.w_inv[i + 1] * (image - self.z(n + 1)?) - lin)
    }

    fn block_diag_apply(&self, n: i64, y: &DVector<f64>) -> DVector<f64> {
        let b = &self.frame.b[self.frame.idx(n)];
        let mut out = DVector::zeros(y.len());
        for (s, d) in self.frame.ranges() {
            if d > 0 {
                let part = b.view((s, s), (d, d)) * y.rows(s, d);
                out.rows_mut(s, d).copy_from(&part);
            }
        }
        out
    }

    fn block_diag_solve(&self, n: i64, rhs: &DVector<f64>, which: &[usize]) -> Result<DVector<f64>> {
        let b = &self.frame.b[self.frame.idx(n)];
        let ranges = self.frame.ranges();
        let mut out = rhs.clone();
        for &w in which {
            let (s, d) = ranges[w];
            if d > 0 {
                let blk = b.view((s, s), (d, d)).into_owned();
                let sol = blk
                    .lu()
                    .solve(&rhs.rows(s, d).into_owned())
                    .ok_or_else(|| Error::ChartFailure(format!("singular diagonal block at n = {n}")))?;
                out.rows_mut(s, d).copy_from(&sol);
            }
        }
        Ok(out)
    }

    /// Lyapunov-Perron orbit through tangent coordinates `xi` at block `base`.
    fn segment(&self, kind: ChartKind, base: i64, xi: &[f64], radius: f64) -> Result<Segment> {
        let n = self.rds.model().n_modes();
        let l = self.opts.horizon_blocks as i64;
        let (first, last) = match kind {
            ChartKind::Stable => (base, base + l),
            ChartKind::Unstable => (base - l, base),
            ChartKind::Center => (base - l, base + l),
        };
        let ranges = self.frame.ranges();
        let tangent = match kind {
            ChartKind::Unstable => 0,
            ChartKind::Center => 1,
            ChartKind::Stable => 2,
        };
        let (ts, td) = ranges[tangent];
        if xi.len() != td {
            return Err(Error::param("xi", format!("expected {td} tangent coordinates")));
        }
        let cutoff = (kind == ChartKind::Center).then_some(2.0 * radius);
        let len = (last - first + 1) as usize;
        let weight = |m: i64| {
            let d = (m - base) as f64 * self.opts.t0 * self.opts.upsilon;
            match kind {
                ChartKind::Stable => d.exp(),
                ChartKind::Unstable => (-d).exp(),
                ChartKind::Center => (-d.abs()).exp(),
            }
        };
        let xi_v = DVector::from_column_slice(xi);
        let mut ys = vec![DVector::zeros(n); len];
        ys[(base - first) as usize].rows_mut(ts, td).copy_from(&xi_v);
        let scale = (self.frame.w[self.frame.idx(base)].columns(ts, td) * &xi_v).norm().max(f64::MIN_POSITIVE);
        let mut last_change = f64::NAN;
        for it in 1..=self.opts.max_iter {
            let ks: Vec<DVector<f64>> =
                (first..last).map(|m| self.remainder(m, &ys[(m - first) as usize], cutoff)).collect::<Result<_>>()?;
            let mut next = vec![DVector::zeros(n); len];
            let b0 = (base - first) as usize;
            next[b0].rows_mut(ts, td).copy_from(&xi_v);
            // components integrated forward from the base (tangent of the
            // stable/center chart) or from the far past (the rest)
            let forward_from_base: Vec<usize> = match kind {
                ChartKind::Stable => vec![2],
                ChartKind::Unstable => vec![],
                ChartKind::Center => vec![1],
            };
            let forward_from_start: Vec<usize> = match kind {
                ChartKind::Stable => vec![],
                ChartKind::Unstable => vec![1, 2],
                ChartKind::Center => vec![2],
            };
            let backward_from_base: Vec<usize> = match kind {
                ChartKind::Stable => vec![],
                ChartKind::Unstable => vec![0],
                ChartKind::Center => vec![1],
            };
            let backward_from_end: Vec<usize> = match kind {
                ChartKind::Stable => vec![0, 1],
                ChartKind::Unstable => vec![],
                ChartKind::Center => vec![0],
            };
            let comp = |v: &mut DVector<f64>, src: &DVector<f64>, which: &[usize]| {
                for &w in which {
                    let (s, d) = ranges[w];
                    if d > 0 {
                        v.rows_mut(s, d).copy_from(&src.rows(s, d));
                    }
                }
            };
            for m in first..last {
                let i = (m - first) as usize;
                let step = self.block_diag_apply(m, &next[i]) + &ks[i];
                if m >= base {
                    comp(&mut next[i + 1], &step, &forward_from_base);
                }
                comp(&mut next[i + 1], &step, &forward_from_start);
            }
            for m in (first..last).rev() {
                let i = (m - first) as usize;
                let which: Vec<usize> = if m < base {
                    backward_from_base.iter().chain(&backward_from_end).copied().collect()
                } else {
                    backward_from_end.clone()
                };
                if which.is_empty() {
                    continue;
                }
                let rhs = &next[i + 1] - &ks[i];
                let sol = self.block_diag_solve(m, &rhs, &which)?;
                comp(&mut next[i], &sol, &which);
            }
            let mut inc: f64 = 0.0;
            let mut wsup: f64 = 0.0;
            for (j, (a, b)) in next.iter().zip(&ys).enumerate() {
                let m = first + j as i64;
                let wgt = weight(m);
                inc = inc.max(wgt * (a - b).norm());
                wsup = wsup.max(wgt * (&self.frame.w[self.frame.idx(m)] * a).norm());
            }
            ys = next;
            last_change = inc;
            if !inc.is_finite() || wsup > 1e6 * scale.max(radius) {
                return Err(Error::ChartFailure("Lyapunov-Perron iterates diverge".into()));
            }
            if inc <= self.opts.tol * scale.max(1.0) {
                return Ok(Segment { first, ys, iterations: it, weighted_sup: wsup });
            }
        }
        Err(Error::ChartFailure(format!(
            "Lyapunov-Perron iteration did not converge in {} sweeps (last change {last_change:.3e})",
            self.opts.max_iter
        )))
    }

    fn tangent_range(&self, kind: ChartKind) -> (usize, usize) {
        self.frame.ranges()[match kind {
            ChartKind::Unstable => 0,
            ChartKind::Center => 1,
            ChartKind::Stable => 2,
        }]
    }

    /// Split a frame vector into tangent and complementary coordinates.
    fn split(&self, kind: ChartKind, y: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let (ts, td) = self.tangent_range(kind);
        let tangent = y.rows(ts, td).iter().copied().collect();
        let rest = y.iter().enumerate().filter(|(i, _)| *i < ts || *i >= ts + td).map(|(_, v)| *v).collect();
        (tangent, rest)
    }

    /// Exact chart evaluation at block `base`: the complementary
    /// coordinates and the state on the manifold.
    pub fn graph_at(&self, kind: ChartKind, base: i64, xi: &[f64]) -> Result<(Vec<f64>, StateVector)> {
        let seg = self.segment(kind, base, xi, self.opts.radius)?;
        let y = &seg.ys[(base - seg.first) as usize];
        let (_, rest) = self.split(kind, y);
        Ok((rest, self.z(base)? + &self.frame.w[self.frame.idx(base)] * y))
    }

    /// Frame coordinates of a state at block `n`.
    fn coords(&self, n: i64, x: &StateVector) -> Result<DVector<f64>> {
        Ok(&self.frame.w_inv[self.frame.idx(n)] * (x - self.z(n)?))
    }

    fn check_kind(&self, kind: ChartKind) -> Result<()> {
        let (_, td) = self.tangent_range(kind);
        if td == 0 {
            return Err(Error::Refused(format!("no {kind:?} directions in the spectrum").to_lowercase()));
        }
        if td > 3 {
            return Err(Error::Refused(format!("tangent dimension {td} exceeds the sparse-grid limit of 3")));
        }
        Ok(())
    }

    /// Chart sampled on the sparse grid, shrinking the radius until every
    /// node converges.
    pub fn chart(&self, kind: ChartKind, base: i64) -> Result<ManifoldChart> {
        self.check_kind(kind)?;
        let (_, td) = self.tangent_range(kind);
        let nodes = sparse_nodes(td);
        let mut radius = self.opts.radius;
        loop {
            match self.sample(kind, base, &nodes, radius) {
                Ok(chart) => return Ok(chart),
                Err(Error::ChartFailure(reason)) => {
                    radius *= 0.5;
                    if radius < self.opts.min_radius {
                        return Err(Error::ChartFailure(format!(
                            "no validated radius above {}: {reason}",
                            self.opts.min_radius
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn sample(&self, kind: ChartKind, base: i64, unit_nodes: &[Vec<f64>], radius: f64) -> Result<ManifoldChart> {
        let idx = self.frame.idx(base);
        let (ts, td) = self.tangent_range(kind);
        let mut nodes = Vec::with_capacity(unit_nodes.len());
        let mut values = Vec::with_capacity(unit_nodes.len());
        let mut points = Vec::with_capacity(unit_nodes.len());
        let mut iterations = 0;
        let mut weighted: f64 = 0.0;
        for u in unit_nodes {
            let xi: Vec<f64> = u.iter().map(|v| v * radius).collect();
            let seg = self.segment(kind, base, &xi, radius)?;
            let y = &seg.ys[(base - seg.first) as usize];
            let offset = (&self.frame.w[idx] * y).norm();
            // orbits through the base point itself only carry solver noise
            let floor = 1e-10 * (1.0 + self.z(base)?.norm());
            if seg.weighted_sup > self.opts.weight_bound * offset.max(floor) {
                return Err(Error::ChartFailure(format!(
                    "orbit leaves the υ-weighted space (sup {:.3e} vs offset {:.3e})",
                    seg.weighted_sup, offset
                )));
            }
            let (_, rest) = self.split(kind, y);
            iterations = iterations.max(seg.iterations);
            if offset > floor {
                weighted = weighted.max(seg.weighted_sup / offset);
            }
            points.push(self.z(base)? + &self.frame.w[idx] * y);
            nodes.push(xi);
            values.push(rest);
        }
        let fit = PolyFit::fit(td, &nodes, &values, radius)?;
        let w = &self.frame.w[idx];
        let tangent = w.columns(ts, td).into_owned();
        let others: Vec<usize> = (0..w.ncols()).filter(|c| *c < ts || *c >= ts + td).collect();
        let complement = DMatrix::from_columns(&others.iter().map(|&c| w.column(c).into_owned()).collect::<Vec<_>>());
        Ok(ManifoldChart {
            kind,
            base_block: base,
            base_time: base as f64 * self.opts.t0,
            t0: self.opts.t0,
            upsilon: self.opts.upsilon,
            radius,
            requested_radius: self.opts.radius,
            base_point: self.z(base)?.clone(),
            tangent,
            complement,
            nodes,
            values,
            points,
            fit,
            iterations,
            weighted_ratio: weighted,
        })
    }

    /// One-block invariance defect: the image of the chart point at `xi`
    /// compared with the independently built chart one block later.
    pub fn invariance_defect(&self, kind: ChartKind, base: i64, xi: &[f64]) -> Result<f64> {
        let (_, p) = self.graph_at(kind, base, xi)?;
        let view = self.omega.shift(base as f64 * self.opts.t0)?;
        let image = self.rds.cocycle_apply(&view, self.opts.t0, &p)?;
        let y1 = self.coords(base + 1, &image)?;
        let (tan, _) = self.split(kind, &y1);
        let (_, q) = self.graph_at(kind, base + 1, &tan)?;
        Ok((image - q).norm())
    }

    /// Forward simulation from the chart point at `xi` (and the pair with
    /// `xi/2`); fitted per-block rates of the distance to `Z` and between
    /// the pair.
    pub fn decay_rate_check(
        &self,
        chart: &ManifoldChart,
        xi: &[f64],
        n_max: usize,
        exponent: f64,
    ) -> Result<DecayReport> {
        if n_max == 0 {
            return Err(Error::param("n_max", "decay rate undefined without steps"));
        }
        let half: Vec<f64> = xi.iter().map(|v| 0.5 * v).collect();
        let (_, p) = self.graph_at(chart.kind, chart.base_block, xi)?;
        let (_, p2) = self.graph_at(chart.kind, chart.base_block, &half)?;
        let mut x = p.clone();
        let mut x2 = p2.clone();
        let d0 = (&p - self.z(chart.base_block)?).norm();
        let e0 = (&p - &p2).norm();
        let mut dists = vec![d0];
        let mut pairs = vec![e0];
        let mut truncated = false;
        let floor = 1e-11 * (1.0 + chart.base_point.norm());
        for k in 0..n_max as i64 {
            let n = chart.base_block + k;
            let view = self.omega.shift(n as f64 * self.opts.t0)?;
            x = self.rds.cocycle_apply(&view, self.opts.t0, &x)?;
            x2 = self.rds.cocycle_apply(&view, self.opts.t0, &x2)?;
            let d = (&x - self.z(n + 1)?).norm();
            let e = (&x - &x2).norm();
            if d > 10.0 * chart.radius.max(d0) || d < floor || e < floor {
                truncated = true;
                break;
            }
            dists.push(d);
            pairs.push(e);
        }
        let rate = |v: &[f64]| {
            if v.len() < 3 {
                return f64::NAN;
            }
            let skip = v.len() / 4;
            let xs: Vec<f64> = (skip..v.len()).map(|i| i as f64).collect();
            let ys: Vec<f64> = v[skip..].iter().map(|d| d.ln()).collect();
            crate::spectral::least_squares_slope(&xs, &ys)
        };
        let point_rate = rate(&dists);
        let pair_rate = rate(&pairs);
        let bound = self.opts.t0 * exponent;
        let allowed = bound + 0.1 * bound.abs();
        Ok(DecayReport {
            steps: dists.len() - 1,
            point_rate,
            pair_rate,
            bound,
            allowed,
            truncated,
            pass: point_rate <= allowed && pair_rate <= allowed,
            distances: dists,
        })
    }

    /// Backward decay of the constructed history of an unstable-chart point:
    /// per-block rate of `‖X_{-n} - Z_{-n}‖` as `n` grows.
    pub fn backward_decay(&self, base: i64, xi: &[f64]) -> Result<f64> {
        let seg = self.segment(ChartKind::Unstable, base, xi, self.opts.radius)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let floor = 1e-13;
        for (j, y) in seg.ys.iter().enumerate().rev() {
            let m = seg.first + j as i64;
            let d = (&self.frame.w[self.frame.idx(m)] * y).norm();
            if d < floor || base - m > self.opts.horizon_blocks as i64 / 2 {
                break;
            }
            xs.push((base - m) as f64);
            ys.push(d.ln());
        }
        if xs.len() < 3 {
            return Err(Error::ChartFailure("history too short to fit a rate".into()));
        }
        Ok(-crate::spectral::least_squares_slope(&xs, &ys))
    }

    /// Per-block growth rate of a forward orbit from the unstable chart
    /// until it leaves the ball of radius `escape`.
    pub fn forward_growth(&self, base: i64, xi: &[f64], escape: f64, n_max: usize) -> Result<f64> {
        let (_, mut x) = self.graph_at(ChartKind::Unstable, base, xi)?;
        let mut xs = vec![0.0];
        let mut ys = vec![(&x - self.z(base)?).norm().ln()];
        for k in 0..n_max as i64 {
            let n = base + k;
            let view = self.omega.shift(n as f64 * self.opts.t0)?;
            x = self.rds.cocycle_apply(&view, self.opts.t0, &x)?;
            let d = (&x - self.z(n + 1)?).norm();
            if d > escape {
                break;
            }
            xs.push((k + 1) as f64);
            ys.push(d.ln());
        }
        if xs.len() < 3 {
            return Err(Error::ChartFailure("orbit escaped before a rate could be fitted".into()));
        }
        Ok(crate::spectral::least_squares_slope(&xs, &ys))
    }

    /// Linear coefficient `c1` of the least-squares fit
    /// `‖graph(r·dir)‖ ≈ c1 r + c2 r²` over the given radii; near zero when
    /// the chart is tangent to its frame subspace.
    pub fn tangency_slope(&self, kind: ChartKind, base: i64, dir: &[f64], radii: &[f64]) -> Result<f64> {
        if radii.len() < 2 {
            return Err(Error::param("radii", "need at least two radii"));
        }
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::param("dir", "direction must be non-zero"));
        }
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &r in radii {
            let xi: Vec<f64> = dir.iter().map(|x| r * x / norm).collect();
            let (v, _) = self.graph_at(kind, base, &xi)?;
            let g = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            s11 += r * r;
            s12 += r * r * r;
            s22 += r.powi(4);
            b1 += r * g;
            b2 += r * r * g;
        }
        let det = s11 * s22 - s12 * s12;
        if det.abs() <= 1e-300 {
            return Err(Error::param("radii", "radii must be distinct"));
        }
        Ok((b1 * s22 - b2 * s12) / det)
    }

    /// Principal angle between the chart tangent at `base` and a subspace.
    pub fn tangent_angle(&self, kind: ChartKind, base: i64, basis: &DMatrix<f64>) -> f64 {
        let (ts, td) = self.tangent_range(kind);
        let t = self.frame.w[self.frame.idx(base)].columns(ts, td).into_owned();
        principal_angle(&t, basis)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub steps: usize,
    /// Fitted per-block rate of `‖X_n - Z_n‖`.
    pub point_rate: f64,
    /// Fitted per-block rate of the distance between the pair.
    pub pair_rate: f64,
    /// `t0·μ` for the supplied exponent.
    pub bound: f64,
    /// `bound` with 10% slack.
    pub allowed: f64,
    pub truncated: bool,
    pub pass: bool,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifoldChart {
    pub kind: ChartKind,
    pub base_block: i64,
    pub base_time: f64,
    pub t0: f64,
    pub upsilon: f64,
    /// Validated radius.
    pub radius: f64,
    pub requested_radius: f64,
    pub base_point: StateVector,
    /// Orthonormal tangent basis (columns).
    pub tangent: DMatrix<f64>,
    /// Remaining frame columns, in the order of `values`.
    pub complement: DMatrix<f64>,
    /// Sparse-grid nodes in tangent coordinates.
    pub nodes: Vec<Vec<f64>>,
    /// Complementary coordinates at each node.
    pub values: Vec<Vec<f64>>,
    /// Points on the manifold.
    pub points: Vec<StateVector>,
    pub fit: PolyFit,
    pub iterations: usize,
    /// Largest weighted orbit norm relative to the initial offset.
    pub weighted_ratio: f64,
}

impl ManifoldChart {
    /// Interpolated complementary coordinates at `xi`.
    pub fn eval(&self, xi: &[f64]) -> Vec<f64> {
        self.fit.eval(xi)
    }

    /// `max ‖values‖` over the nodes, zero for the linear case.
    pub fn graph_size(&self) -> f64 {
        self.values.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }
}

/// Nested Clenshaw-Curtis levels `{0}`, `{0, ±1}`, `{0, ±1, ±1/√2}` combined
/// in a level-3 Smolyak grid on `[-1, 1]^d`.
pub fn sparse_nodes(d: usize) -> Vec<Vec<f64>> {
    let levels: [Vec<f64>; 3] = [
        vec![0.0],
        vec![0.0, -1.0, 1.0],
        vec![0.0, -1.0, 1.0, -std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    ];
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let sum: usize = idx.iter().sum();
        if sum <= 2 {
            let mut grid: Vec<Vec<f64>> = vec![Vec::new()];
            for &l in &idx {
                grid = grid
                    .into_iter()
                    .flat_map(|p| levels[l].iter().map(move |x| [p.clone(), vec![*x]].concat()))
                    .collect();
            }
            for p in grid {
                if !out.iter().any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-15)) {
                    out.push(p);
                }
            }
        }
        // next multi-index
        let mut k = 0;
        loop {
            if k == d {
                return out;
            }
            idx[k] += 1;
            if idx[k] < 3 {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Least-squares polynomial of total degree 1..=3 without constant term.
#[derive(Debug, Clone, Serialize)]
pub struct PolyFit {
    pub exponents: Vec<Vec<u8>>,
    /// `monomials x outputs`.
    pub coeffs: Vec<Vec<f64>>,
    /// Monomials are evaluated at `xi / scale`.
    pub scale: f64,
    pub residual: f64,
}

impl PolyFit {
    fn monomials(d: usize) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for deg in 1..=3u8 {
            let mut idx = vec![0u8; d];
            loop {
                if idx.iter().sum::<u8>() == deg {
                    out.push(idx.clone());
                }
                let mut k = 0;
                loop {
                    if k == d {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] <= deg {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == d {
                    break;
                }
            }
        }
        out
    }

    fn basis(exps: &[Vec<u8>], xi: &[f64], scale: f64) -> Vec<f64> {
        exps.iter().map(|e| e.iter().zip(xi).map(|(p, x)| (x / scale).powi(*p as i32)).product()).collect()
    }

    fn fit(d: usize, nodes: &[Vec<f64>], values: &[Vec<f64>], scale: f64) -> Result<Self> {
        let exponents = Self::monomials(d);
        let rows = nodes.len();
        let outs = values.first().map_or(0, |v| v.len());
        let a = DMatrix::from_fn(rows, exponents.len(), |i, j| Self::basis(&exponents, &nodes[i], scale)[j]);
        let b = DMatrix::from_fn(rows, outs, |i, j| values[i][j]);
        let svd = a.clone().svd(true, true);
        let c = svd.solve(&b, 1e-12).map_err(|e| Error::ChartFailure(format!("sparse-grid fit failed: {e}")))?;
        let residual = (&a * &c - &b).amax();
        let coeffs = (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect();
        Ok(Self { exponents, coeffs, scale, residual })
    }

    pub fn eval(&self, xi: &[f64]) -> Vec<f64> {
        let phi = Self::basis(&self.exponents, xi, self.scale);
        let outs = self.coeffs.first().map_or(0, |c| c.len());
        (0..outs).map(|j| phi.iter().zip(&self.coeffs).map(|(p, c)| p * c[j]).sum()).collect()
    }
}
