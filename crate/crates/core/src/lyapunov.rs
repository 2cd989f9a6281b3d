//! Lyapunov exponents and Oseledets subspaces of the linearized cocycle by
//! block-wise QR (Benettin) along a base orbit.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::cocycle::Rds;
use crate::error::{Error, Result};
use crate::linalg::{hstack, intersection, inverse, orthonormalize, principal_angle, qr_signed};
use crate::noise::{NoisePath, ShiftView};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{SpectralModel, StateVector};
use crate::stationary::{stationary_point, StationaryOptions, StationaryPoint};
use crate::variational::StepLinearizer;

/// Absolute floor of the center classification band.
pub const CENTER_FLOOR: f64 = 1e-3;

/// Orbit along which the cocycle is linearized.
#[derive(Debug, Clone)]
pub enum BaseOrbit<'s> {
    Stationary(&'s StationaryPoint),
    /// Forward orbit started from this state at the first block.
    Explicit(StateVector),
}

#[derive(Debug, Clone, Copy)]
pub struct LyapunovOptions {
    pub t0: f64,
    pub n_blocks: usize,
    /// View block index `k` (time `k·t0`) where accumulation starts.
    pub start_block: i64,
    /// View block index of the reported bases; defaults to 80% of the run.
    pub reference_block: Option<i64>,
    pub batches: usize,
    pub resamples: usize,
    pub seed: u64,
    /// Stride of the running-estimate history.
    pub history_every: usize,
}

impl LyapunovOptions {
    pub fn new(t0: f64, n_blocks: usize) -> Self {
        Self {
            t0,
            n_blocks,
            start_block: 0,
            reference_block: None,
            batches: 20,
            resamples: 400,
            seed: 0x5eed,
            history_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Unstable,
    Center,
    Stable,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentGroup {
    pub value: f64,
    pub ci: f64,
    pub multiplicity: usize,
    /// Positions in the descending exponent list.
    pub indices: Vec<usize>,
    pub class: Class,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryRow {
    pub block: usize,
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovSpectrum {
    pub t0: f64,
    pub n_blocks: usize,
    /// Descending.
    pub exponents: Vec<f64>,
    /// 95% bootstrap half-widths.
    pub ci: Vec<f64>,
    pub groups: Vec<ExponentGroup>,
    /// View time of `bases`.
    pub reference_time: f64,
    /// Orthonormal basis of each fast subspace at the reference time.
    #[serde(skip)]
    pub bases: Vec<DMatrix<f64>>,
    /// Principal angle between the pushed-forward and the next subspace.
    pub equivariance_angles: Vec<f64>,
    pub history: Vec<HistoryRow>,
    /// Largest negative exponent.
    pub mu_stable_top: Option<f64>,
    /// Smallest positive exponent.
    pub mu_unstable_bottom: Option<f64>,
    /// Directions whose `R` diagonal underflowed in some block.
    pub dropped_modes: Vec<usize>,
}

/// Supplies consecutive block matrices along a base orbit.
struct BlockSource<'r, 'a, 's> {
    rds: &'r Rds<'a>,
    lin: StepLinearizer<'r, 'a>,
    orbit: BaseOrbit<'s>,
    steps_per_block: usize,
    /// Base index of the start of the next block.
    cursor: i64,
    state: Option<StateVector>,
    constant: Option<DMatrix<f64>>,
}

impl<'r, 'a, 's> BlockSource<'r, 'a, 's> {
    fn new(rds: &'r Rds<'a>, omega: &ShiftView<'_>, orbit: BaseOrbit<'s>, t0: f64, start_block: i64) -> Result<Self> {
        let steps_per_block = steps_per_block(rds, t0)?;
        let cursor = omega.base_index(0.0)? + start_block * steps_per_block as i64;
        let lin = StepLinearizer::new(rds)?;
        let constant = if lin.is_constant() {
            let fields = vec![rds.model().zero_state(); steps_per_block + 1];
            Some(lin.block(&fields)?)
        } else {
            None
        };
        let state = match &orbit {
            BaseOrbit::Explicit(x) => Some(x - rds.y_at(cursor)?),
            BaseOrbit::Stationary(_) => None,
        };
        Ok(Self { rds, lin, orbit, steps_per_block, cursor, state, constant })
    }

    fn next_block(&mut self) -> Result<DMatrix<f64>> {
        let spb = self.steps_per_block as i64;
        let start = self.cursor;
        self.cursor += spb;
        if let Some(m) = &self.constant {
            // the range must still exist on the path
            self.rds.y_at(start + spb)?;
            return Ok(m.clone());
        }
        let fields: Vec<StateVector> = match &self.orbit {
            BaseOrbit::Stationary(sp) => {
                (start..=start + spb).map(|m| sp.at_index(m).cloned()).collect::<Result<_>>()?
            }
            BaseOrbit::Explicit(_) => {
                let mut v = self.state.take().expect("explicit orbit state");
                let mut y = self.rds.y_at(start)?;
                let mut out = vec![&v + &y];
                for m in start..start + spb {
                    let y_next = self.rds.y_at(m + 1)?;
                    let (v_next, _, _) = self.rds.step(&v, &y, &y_next)?;
                    v = v_next;
                    y = y_next;
                    out.push(&v + &y);
                }
                self.state = Some(v);
                out
            }
        };
        self.lin.block(&fields)
    }
}

pub(crate) fn steps_per_block(rds: &Rds<'_>, t0: f64) -> Result<usize> {
    let x = t0 / rds.dt();
    let k = x.round();
    if !(t0 > 0.0) || (x - k).abs() > 1e-7 * x.max(1.0) || k < 1.0 {
        return Err(Error::OffGrid { t: t0, dt: rds.dt() });
    }
    Ok(k as usize)
}

pub fn lyapunov_spectrum(
    rds: &Rds<'_>,
    omega: &ShiftView<'_>,
    orbit: BaseOrbit<'_>,
    opts: LyapunovOptions,
) -> Result<LyapunovSpectrum> {
    let n = rds.model().n_modes();
    let nb = opts.n_blocks;
    if nb < 2 * opts.batches.max(1) {
        return Err(Error::param("n_blocks", format!("need at least {} blocks", 2 * opts.batches.max(1))));
    }
    let reference = opts.reference_block.unwrap_or(opts.start_block + (0.8 * nb as f64) as i64);
    let kr = reference - opts.start_block;
    if kr < 0 || kr + 1 >= nb as i64 {
        return Err(Error::param("reference_block", "must lie strictly inside the run"));
    }
    let kr = kr as usize;
    let mut source = BlockSource::new(rds, omega, orbit, opts.t0, opts.start_block)?;

    let mut q = DMatrix::<f64>::identity(n, n);
    let mut logs = vec![vec![0.0; n]; nb];
    let mut sums = vec![0.0; n];
    let mut dropped = vec![false; n];
    let mut tail: Vec<DMatrix<f64>> = Vec::with_capacity(nb - kr);
    let mut q_ref = Vec::new();
    let mut history = Vec::new();
    for k in 0..nb {
        if k == kr || k == kr + 1 {
            q_ref.push(q.clone());
        }
        let a = source.next_block()?;
        let (qn, r) = qr_signed(&a * &q);
        for i in 0..n {
            let d = r[(i, i)];
            let l = if d > f64::MIN_POSITIVE {
                d.ln()
            } else {
                dropped[i] = true;
                f64::MIN_POSITIVE.ln()
            };
            logs[k][i] = l;
            sums[i] += l;
        }
        q = qn;
        if k >= kr {
            tail.push(a);
        }
        if opts.history_every > 0 && (k + 1) % opts.history_every == 0 {
            history.push(HistoryRow {
                block: k + 1,
                estimates: sums.iter().map(|s| s / ((k + 1) as f64 * opts.t0)).collect(),
            });
        }
    }
    let raw: Vec<f64> = sums.iter().map(|s| s / (nb as f64 * opts.t0)).collect();
    let raw_ci = bootstrap_ci(&logs, opts);

    // backward iteration of the transposed cocycle over the tail window
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut p_ref = vec![DMatrix::zeros(n, n); 2];
    for (j, a) in tail.iter().enumerate().rev() {
        p = qr_signed(a.transpose() * &p).0;
        if j <= 1 {
            p_ref[j] = p.clone();
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));
    let exponents: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let ci: Vec<f64> = order.iter().map(|&i| raw_ci[i]).collect();
    let groups = group_exponents(&exponents, &ci);

    let fast = |qm: &DMatrix<f64>, pm: &DMatrix<f64>, g: &ExponentGroup| {
        let lo = g.indices[0];
        let hi = lo + g.multiplicity;
        let forward = qm.columns(0, hi).into_owned();
        let slow = pm.columns(lo, n - lo).into_owned();
        intersection(&forward, &slow, g.multiplicity)
    };
    let bases: Vec<DMatrix<f64>> = groups.iter().map(|g| fast(&q_ref[0], &p_ref[0], g)).collect();
    let next: Vec<DMatrix<f64>> = groups.iter().map(|g| fast(&q_ref[1], &p_ref[1], g)).collect();
    let equivariance_angles =
        bases.iter().zip(&next).map(|(h, h1)| principal_angle(&orthonormalize(&tail[0] * h), h1)).collect();

    let mu_stable_top = groups.iter().filter(|g| g.class == Class::Stable).map(|g| g.value).reduce(f64::max);
    let mu_unstable_bottom = groups.iter().filter(|g| g.class == Class::Unstable).map(|g| g.value).reduce(f64::min);
    Ok(LyapunovSpectrum {
        t0: opts.t0,
        n_blocks: nb,
        exponents,
        ci,
        groups,
        reference_time: reference as f64 * opts.t0,
        bases,
        equivariance_angles,
        history,
        mu_stable_top,
        mu_unstable_bottom,
        dropped_modes: (0..n).filter(|&i| dropped[i]).collect(),
    })
}

/// Batch means of the per-block logs, resampled with a fixed seed.
fn bootstrap_ci(logs: &[Vec<f64>], opts: LyapunovOptions) -> Vec<f64> {
    let n = logs[0].len();
    let b = opts.batches.max(2);
    let size = logs.len() / b;
    let means: Vec<Vec<f64>> = (0..b)
        .map(|j| {
            let chunk = &logs[j * size..(j + 1) * size];
            (0..n).map(|i| chunk.iter().map(|r| r[i]).sum::<f64>() / (size as f64 * opts.t0)).collect()
        })
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut samples = vec![Vec::with_capacity(opts.resamples); n];
    for _ in 0..opts.resamples.max(1) {
        let picks: Vec<usize> = (0..b).map(|_| rng.random_range(0..b)).collect();
        for (i, s) in samples.iter_mut().enumerate() {
            s.push(picks.iter().map(|&p| means[p][i]).sum::<f64>() / b as f64);
        }
    }
    samples
        .into_iter()
        .map(|mut s| {
            s.sort_by(f64::total_cmp);
            let lo = s[((0.025 * s.len() as f64) as usize).min(s.len() - 1)];
            let hi = s[((0.975 * s.len() as f64) as usize).min(s.len() - 1)];
            0.5 * (hi - lo)
        })
        .collect()
}

/// Center band half-width for an exponent with confidence half-width `ci`.
pub fn center_band(ci: f64) -> f64 {
    (3.0 * ci).max(CENTER_FLOOR)
}

fn classify(value: f64, ci: f64) -> Class {
    if value.abs() < center_band(ci) {
        Class::Center
    } else if value > 0.0 {
        Class::Unstable
    } else {
        Class::Stable
    }
}

fn group_exponents(exponents: &[f64], ci: &[f64]) -> Vec<ExponentGroup> {
    let mut groups: Vec<ExponentGroup> = Vec::new();
    for (i, (&v, &c)) in exponents.iter().zip(ci).enumerate() {
        if let Some(last) = groups.last_mut() {
            let j = *last.indices.last().expect("non-empty group");
            let close = (exponents[j] - v).abs() <= (ci[j] + c).max(CENTER_FLOOR);
            if close && classify(v, c) == last.class {
                last.indices.push(i);
                last.multiplicity += 1;
                let k = last.multiplicity as f64;
                last.value += (v - last.value) / k;
                last.ci = last.ci.max(c);
                continue;
            }
        }
        groups.push(ExponentGroup { value: v, ci: c, multiplicity: 1, indices: vec![i], class: classify(v, c) });
    }
    groups
}

/// Grouped bases and oblique projections of the splitting.
#[derive(Debug, Clone)]
pub struct Splitting {
    pub unstable: DMatrix<f64>,
    pub center: DMatrix<f64>,
    pub stable: DMatrix<f64>,
    pub proj_unstable: DMatrix<f64>,
    pub proj_center: DMatrix<f64>,
    pub proj_stable: DMatrix<f64>,
}

impl Splitting {
    /// `max(‖Π²-Π‖, ‖Π_S Π_U‖, ‖Π_S+Π_C+Π_U-I‖)` over the three projections.
    pub fn projection_defect(&self) -> f64 {
        let n = self.proj_stable.nrows();
        let id = DMatrix::<f64>::identity(n, n);
        let mut d: f64 = 0.0;
        for p in [&self.proj_unstable, &self.proj_center, &self.proj_stable] {
            d = d.max((p * p - p).amax());
        }
        d = d.max((&self.proj_stable * &self.proj_unstable).amax());
        d = d.max((&self.proj_unstable * &self.proj_stable).amax());
        d.max((&self.proj_stable + &self.proj_center + &self.proj_unstable - id).amax())
    }
}

/// Group the fast subspaces by sign. Exponents with `|μ| < threshold` are
/// center; any other exponent within `2·ci` of zero makes the split
/// ambiguous.
pub fn oseledets_splitting(spectrum: &LyapunovSpectrum, threshold: f64) -> Result<Splitting> {
    let n = spectrum.exponents.len();
    let mut parts: [Vec<&DMatrix<f64>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (g, basis) in spectrum.groups.iter().zip(&spectrum.bases) {
        let slot = if g.value.abs() < threshold {
            1
        } else {
            if g.value.abs() <= 2.0 * g.ci {
                return Err(Error::Ambiguous(format!(
                    "exponent {:.4e} with confidence half-width {:.2e} cannot be separated from zero",
                    g.value, g.ci
                )));
            }
            if g.value > 0.0 {
                0
            } else {
                2
            }
        };
        parts[slot].push(basis);
    }
    let stack = |v: &Vec<&DMatrix<f64>>| if v.is_empty() { DMatrix::zeros(n, 0) } else { hstack(v) };
    let unstable = stack(&parts[0]);
    let center = stack(&parts[1]);
    let stable = stack(&parts[2]);
    let w = hstack(&[&unstable, &center, &stable]);
    let w_inv = inverse(&w, "Oseledets frame")?;
    let proj = |start: usize, len: usize| w.columns(start, len).into_owned() * w_inv.rows(start, len).into_owned();
    let (du, dc, ds) = (unstable.ncols(), center.ncols(), stable.ncols());
    Ok(Splitting {
        proj_unstable: proj(0, du),
        proj_center: proj(du, dc),
        proj_stable: proj(du + dc, ds),
        unstable,
        center,
        stable,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TailSummary {
    pub mean: f64,
    pub mean_ci: f64,
    pub median: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
    pub kurtosis: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityReport {
    pub samples: usize,
    pub t0: f64,
    /// `sup_{t ≤ t0} log⁺‖ψᵗ_ω‖`.
    pub forward: TailSummary,
    /// `sup_{t ≤ t0} log⁺‖ψ^{t0-t}_{θ_t ω}‖`.
    pub backward: TailSummary,
    /// Kurtosis above this flags a heavy tail.
    pub kurtosis_alarm: f64,
    pub heavy_tail: bool,
}

/// Which base point to linearize at for each ensemble member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrabilityBase {
    Stationary,
    Origin,
}

/// Ensemble statistics of the log-norms entering the integrability
/// hypothesis of the ergodic theorem.
pub fn integrability_estimate(
    model: &SpectralModel,
    paths: &[NoisePath],
    nonlin: &Nonlinearity,
    base: IntegrabilityBase,
    t0: f64,
    seed: u64,
) -> Result<IntegrabilityReport> {
    if paths.len() < 100 {
        return Err(Error::param("paths", format!("ensemble of {} is below 100", paths.len())));
    }
    let mut forward = Vec::with_capacity(paths.len());
    let mut backward = Vec::with_capacity(paths.len());
    for path in paths {
        let rds = Rds::new(model, path, nonlin)?;
        let omega = path.view();
        let spb = steps_per_block(&rds, t0)?;
        let sp;
        let fields: Vec<StateVector> = match base {
            IntegrabilityBase::Stationary => {
                sp = stationary_point(&rds, &omega, (0.0, t0), StationaryOptions::default())?;
                (0..=spb).map(|j| sp.at(j as f64 * rds.dt())).collect::<Result<_>>()?
            }
            IntegrabilityBase::Origin => {
                let tr = rds.solve_random_pde(&omega, &model.zero_state(), t0)?;
                (0..=spb).map(|j| tr.field(j)).collect()
            }
        };
        let lin = StepLinearizer::new(&rds)?;
        let steps: Vec<DMatrix<f64>> = fields[1..].iter().map(|x| lin.step(x)).collect::<Result<_>>()?;
        let n = model.n_modes();
        let mut prod = DMatrix::<f64>::identity(n, n);
        let mut f: f64 = 0.0;
        for s in &steps {
            prod = s * prod;
            f = f.max(spectral_log_plus(&prod));
        }
        let mut tail = DMatrix::<f64>::identity(n, n);
        let mut b: f64 = 0.0;
        for s in steps.iter().rev() {
            tail = &tail * s;
            b = b.max(spectral_log_plus(&tail));
        }
        forward.push(f);
        backward.push(b);
    }
    let alarm = 50.0;
    let fw = summarize(&forward, seed);
    let bw = summarize(&backward, seed ^ 1);
    let heavy_tail = fw.kurtosis > alarm || bw.kurtosis > alarm;
    Ok(IntegrabilityReport { samples: paths.len(), t0, forward: fw, backward: bw, kurtosis_alarm: alarm, heavy_tail })
}

fn spectral_log_plus(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max().ln().max(0.0)
}

fn summarize(xs: &[f64], seed: u64) -> TailSummary {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let kurtosis = if var > 0.0 { m4 / (var * var) } else { 0.0 };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut boots: Vec<f64> =
        (0..400).map(|_| (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / n).collect();
    boots.sort_by(f64::total_cmp);
    let mean_ci = 0.5 * (boots[389] - boots[10]);
    TailSummary { mean, mean_ci, median: q(0.5), q90: q(0.9), q99: q(0.99), max: sorted[sorted.len() - 1], kurtosis }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::NonlinearityKind;

    #[test]
    fn diagonal_cocycle_recovers_drifts() {
        let m = SpectralModel::build(4, 0.5, 0.5, 1.5).unwrap();
        let p = NoisePath::zero(1e-2, -1.0, 60.0).unwrap();
        let g = Nonlinearity::new(NonlinearityKind::Zero, &m).unwrap();
        let rds = Rds::new(&m, &p, &g).unwrap();
        let s = lyapunov_spectrum(&rds, &p.view(), BaseOrbit::Explicit(m.zero_state()), LyapunovOptions::new(0.1, 500))
            .unwrap();
        for (e, a) in s.exponents.iter().zip(m.drifts()) {
            assert!((e - a).abs() < 1e-9, "{e} vs {a}");
        }
        let split = oseledets_splitting(&s, 1e-3).unwrap();
        assert_eq!((split.unstable.ncols(), split.center.ncols(), split.stable.ncols()), (1, 0, 3));
        assert!(split.projection_defect() < 1e-10);
        assert!(s.equivariance_angles.iter().all(|a| *a < 1e-6));
    }
}
