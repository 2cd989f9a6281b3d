//! The six experiments. Each fills an [`Outputs`] collector and the plot
//! tables; nothing is written to disk here.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rdslab::bounds::{
    apriori_bound_check, derivative_growth_bound, difference_bound_check, holder_derivative_check, moment_report,
    r_alpha, r_alpha_series, BoundCheck, CertificationReport, HolderReport, MomentReport,
};
use rdslab::cocycle::SolverStats;
use rdslab::lyapunov::{
    center_band, lyapunov_spectrum, oseledets_splitting, BaseOrbit, LyapunovOptions, LyapunovSpectrum,
};
use rdslab::manifolds::{ChartBuilder, ChartKind, ChartOptions, DecayReport};
use rdslab::stationary::{stationary_point, StationaryOptions, StationaryPoint};
use rdslab::{NoisePath, Nonlinearity, Rds, SolverOptions, SpectralModel, StateVector};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::output::{emit_plot_data, DecayRow, HistoryRow, MarginRow, Outputs, PlotResults, SliceRow};
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

/// Model, nonlinearity and base noise path built from a validated config.
pub struct Setup {
    pub model: SpectralModel,
    pub nonlin: Nonlinearity,
    pub path: NoisePath,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let model = cfg.model()?;
        let nonlin = Nonlinearity::new(cfg.nonlinearity.clone(), &model)?;
        let n = &cfg.noise;
        let path = NoisePath::sample(n.dt, n.t_minus, n.t_plus, n.q, n.seed)?;
        Ok(Self { model, nonlin, path })
    }

    fn initial(&self, cfg: &ExperimentConfig) -> StateVector {
        match &cfg.run.initial {
            Some(x) => DVector::from_column_slice(x),
            None => self.model.zero_state(),
        }
    }

    fn quiet(&self) -> bool {
        self.path.increments().iter().all(|w| w[0] == 0.0 && w[1] == 0.0)
            && self.nonlin.apply(&self.model.zero_state()).amax() == 0.0
    }
}

pub fn run(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let setup = Setup::new(cfg)?;
    let mut plots = PlotResults::default();
    match cfg.run.experiment {
        Experiment::Simulate => simulate(cfg, &setup, out)?,
        Experiment::Lyapunov => {
            lyapunov(cfg, &setup, out, &mut plots)?;
            emit_plot_data(&plots, "exponent_history", out)?;
        }
        Experiment::Stationary => stationary(cfg, &setup, out)?,
        Experiment::Manifold => {
            manifold(cfg, &setup, out, &mut plots)?;
            emit_plot_data(&plots, "chart_slice", out)?;
            emit_plot_data(&plots, "decay_fit", out)?;
        }
        Experiment::CertifyBounds => {
            certify_bounds(cfg, &setup, out, &mut plots)?;
            emit_plot_data(&plots, "bound_margins", out)?;
        }
        Experiment::Convergence => convergence(cfg, &setup, out)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct StateRow {
    t: f64,
    k: usize,
    value: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    steps: usize,
    t_end: f64,
    final_state: Vec<f64>,
    final_norm: f64,
    max_norm: f64,
    stats: SolverStats,
}

fn simulate(cfg: &ExperimentConfig, s: &Setup, out: &mut Outputs) -> Result<()> {
    let rds = Rds::new(&s.model, &s.path, &s.nonlin)?;
    let t_end = cfg.run.n_steps as f64 * cfg.noise.dt;
    let traj = rds.solve_random_pde(&s.path.view(), &s.initial(cfg), t_end)?;
    let mut rows = Vec::with_capacity(traj.times.len() * s.model.n_modes());
    let mut max_norm: f64 = 0.0;
    for (i, &t) in traj.times.iter().enumerate() {
        let x = traj.field(i);
        max_norm = max_norm.max(x.norm());
        rows.extend(x.iter().enumerate().map(|(k, &value)| StateRow { t, k, value }));
    }
    let last = traj.last_field();
    out.csv("trajectory.csv", &["t", "k", "value"], &rows)?;
    out.json(
        "simulate.json",
        &SimulateSummary {
            steps: traj.stats.steps,
            t_end,
            final_state: last.iter().copied().collect(),
            final_norm: last.norm(),
            max_norm,
            stats: traj.stats.clone(),
        },
    );
    Ok(())
}

#[derive(Serialize)]
struct ExponentRow {
    k: usize,
    exponent: f64,
    ci: f64,
    drift: f64,
}

#[derive(Serialize)]
struct Sensitivity {
    t0: f64,
    n_blocks: usize,
    exponents: Option<Vec<f64>>,
    max_abs_change: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct LyapunovSummary<'a> {
    spectrum: &'a LyapunovSpectrum,
    /// `μ - λ_k`, descending.
    drifts: Vec<f64>,
    split_dims: Option<(usize, usize, usize)>,
    split_error: Option<String>,
    t0_sensitivity: Vec<Sensitivity>,
}

fn sorted_desc(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn lyapunov(cfg: &ExperimentConfig, s: &Setup, out: &mut Outputs, plots: &mut PlotResults) -> Result<()> {
    let rds = Rds::new(&s.model, &s.path, &s.nonlin)?;
    let r = &cfg.run;
    let options = |t0: f64, n_blocks: usize| {
        let mut o = LyapunovOptions::new(t0, n_blocks);
        o.seed = cfg.noise.seed;
        o.history_every = (n_blocks / 100).max(1);
        o
    };
    let xi = s.initial(cfg);
    let spec = lyapunov_spectrum(&rds, &s.path.view(), BaseOrbit::Explicit(xi.clone()), options(r.t0, r.n_blocks))?;

    let mut t0_sensitivity = Vec::new();
    for factor in [0.5, 2.0] {
        let t0 = r.t0 * factor;
        let n_blocks = (r.n_blocks as f64 / factor).round() as usize;
        let result = lyapunov_spectrum(&rds, &s.path.view(), BaseOrbit::Explicit(xi.clone()), options(t0, n_blocks));
        t0_sensitivity.push(match result {
            Ok(other) => Sensitivity {
                t0,
                n_blocks,
                max_abs_change: Some(
                    other.exponents.iter().zip(&spec.exponents).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                ),
                exponents: Some(other.exponents),
                error: None,
            },
            Err(e) => Sensitivity { t0, n_blocks, exponents: None, max_abs_change: None, error: Some(e.to_string()) },
        });
    }

    let drifts = sorted_desc(s.model.drifts());
    let rows: Vec<ExponentRow> = spec
        .exponents
        .iter()
        .zip(&spec.ci)
        .zip(&drifts)
        .enumerate()
        .map(|(k, ((&exponent, &ci), &drift))| ExponentRow { k, exponent, ci, drift })
        .collect();
    for h in &spec.history {
        for (k, estimate) in sorted_desc(&h.estimates).into_iter().enumerate() {
            plots.exponent_history.push(HistoryRow { block: h.block, k, estimate, ci: spec.ci[k] });
        }
    }
    let threshold = spec.ci.iter().map(|c| center_band(*c)).fold(0.0, f64::max);
    let (split_dims, split_error) = match oseledets_splitting(&spec, threshold) {
        Ok(sp) => (Some((sp.unstable.ncols(), sp.center.ncols(), sp.stable.ncols())), None),
        Err(e) => (None, Some(e.to_string())),
    };
    out.csv("exponents.csv", &["k", "exponent", "ci", "drift"], &rows)?;
    out.json("lyapunov.json", &LyapunovSummary { spectrum: &spec, drifts, split_dims, split_error, t0_sensitivity });
    Ok(())
}

#[derive(Serialize)]
struct InvarianceRow {
    t: f64,
    defect: f64,
}

#[derive(Serialize)]
struct StationarySummary<'a> {
    orbit: &'a StationaryPoint,
    span: (f64, f64),
    invariance: Vec<InvarianceRow>,
}

fn stationary(cfg: &ExperimentConfig, s: &Setup, out: &mut Outputs) -> Result<()> {
    let rds = Rds::new(&s.model, &s.path, &s.nonlin)?;
    let dt = cfg.noise.dt;
    let span = (0.0, cfg.run.n_steps as f64 * dt);
    let view = s.path.view();
    let sp = stationary_point(&rds, &view, span, StationaryOptions::default())?;
    let mut rows = Vec::new();
    for m in 0..=cfg.run.n_steps {
        let t = m as f64 * dt;
        rows.extend(sp.at(t)?.iter().enumerate().map(|(k, &value)| StateRow { t, k, value }));
    }
    let z = sp.z()?;
    let mut invariance = Vec::new();
    for t in [0.1, 0.5, 1.0] {
        let steps = (t / dt).round();
        if (t / dt - steps).abs() > 1e-7 || steps as usize > cfg.run.n_steps {
            continue;
        }
        let moved = rds.cocycle_apply(&view, t, &z)?;
        invariance.push(InvarianceRow { t, defect: (moved - sp.at(t)?).norm() });
    }
    out.csv("stationary.csv", &["t", "k", "value"], &rows)?;
    out.json("stationary.json", &StationarySummary { orbit: &sp, span, invariance });
    Ok(())
}

#[derive(Serialize, Default)]
struct ChartSummary {
    kind: Option<ChartKind>,
    dimension: usize,
    status: String,
    reason: Option<String>,
    radius: Option<f64>,
    requested_radius: Option<f64>,
    iterations: Option<usize>,
    weighted_ratio: Option<f64>,
    fit_residual: Option<f64>,
    graph_size: Option<f64>,
    invariance_defect: Option<f64>,
    tangency_slope: Option<f64>,
    decay: Option<DecayReport>,
    backward_rate: Option<f64>,
    forward_rate: Option<f64>,
    center_exponents: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ManifoldSummary {
    dims: (usize, usize, usize),
    exponents: Vec<f64>,
    ci: Vec<f64>,
    frame_coupling: f64,
    orbit: &'static str,
    charts: Vec<ChartSummary>,
}

fn manifold(cfg: &ExperimentConfig, s: &Setup, out: &mut Outputs, plots: &mut PlotResults) -> Result<()> {
    let tight = SolverOptions { picard_tol: 1e-14, ..SolverOptions::default() };
    let rds = Rds::with_options(&s.model, &s.path, &s.nonlin, tight)?;
    let r = &cfg.run;
    let view = s.path.view();
    let radius = r.radii.iter().copied().fold(0.0, f64::max);
    let copts = ChartOptions::new(r.t0, r.upsilon, radius);
    let start = -(r.n_blocks as i64 / 2);
    let chart_span = copts.orbit_span(0, 1);
    let span = (chart_span.0.min(start as f64 * r.t0), chart_span.1.max((start + r.n_blocks as i64) as f64 * r.t0));
    let (sp, orbit) = if s.quiet() {
        (StationaryPoint::deterministic_equilibrium(&rds, &view, span)?, "deterministic_equilibrium")
    } else {
        (stationary_point(&rds, &view, span, StationaryOptions::default())?, "stationary_point")
    };
    let mut lo = LyapunovOptions::new(r.t0, r.n_blocks);
    lo.start_block = start;
    lo.reference_block = Some(0);
    lo.seed = cfg.noise.seed;
    let spec = lyapunov_spectrum(&rds, &view, BaseOrbit::Stationary(&sp), lo)?;
    let builder = ChartBuilder::new(&rds, view, &sp, &spec, copts, 0, 1)?;
    let (du, dc, ds) = builder.dims();

    let mut charts = Vec::new();
    for (kind, dim) in [(ChartKind::Unstable, du), (ChartKind::Center, dc), (ChartKind::Stable, ds)] {
        let mut summary = ChartSummary { kind: Some(kind), dimension: dim, ..Default::default() };
        if dim == 0 {
            summary.status = "absent".into();
            charts.push(summary);
            continue;
        }
        let chart = match builder.chart(kind, 0) {
            Ok(c) => c,
            Err(e) if e.is_refusal() => {
                summary.status = "refused".into();
                summary.reason = Some(e.to_string());
                charts.push(summary);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let label = format!("{kind:?}").to_lowercase();
        let axis = |v: f64| {
            let mut x = vec![0.0; dim];
            x[0] = v;
            x
        };
        let probe = axis(0.5 * chart.radius);
        summary.status = "ok".into();
        summary.radius = Some(chart.radius);
        summary.requested_radius = Some(chart.requested_radius);
        summary.iterations = Some(chart.iterations);
        summary.weighted_ratio = Some(chart.weighted_ratio);
        summary.fit_residual = Some(chart.fit.residual);
        summary.graph_size = Some(chart.graph_size());
        summary.invariance_defect = Some(builder.invariance_defect(kind, 0, &probe)?);
        let radii: Vec<f64> = r.radii.iter().copied().filter(|x| *x <= chart.radius).collect();
        if radii.len() >= 2 {
            summary.tangency_slope = Some(builder.tangency_slope(kind, 0, &axis(1.0), &radii)?);
        }
        match kind {
            ChartKind::Stable => {
                if let Some(top) = spec.mu_stable_top {
                    let d = builder.decay_rate_check(&chart, &probe, 100, top)?;
                    plots.decay_fit.extend(d.distances.iter().enumerate().map(|(step, &distance)| DecayRow {
                        chart: label.clone(),
                        step,
                        distance,
                    }));
                    summary.decay = Some(d);
                }
            }
            ChartKind::Unstable => {
                summary.backward_rate = Some(builder.backward_decay(0, &probe)?);
                summary.forward_rate = Some(builder.forward_growth(0, &axis(0.1 * chart.radius), 1.0, 200)?);
            }
            ChartKind::Center => {
                summary.center_exponents = Some(
                    spec.groups
                        .iter()
                        .filter(|g| g.class == rdslab::lyapunov::Class::Center)
                        .map(|g| g.value)
                        .collect(),
                );
            }
        }
        for j in 0..=20 {
            let sv = chart.radius * (j as f64 / 10.0 - 1.0);
            for (component, value) in chart.eval(&axis(sv)).into_iter().enumerate() {
                plots.chart_slice.push(SliceRow { chart: label.clone(), s: sv, component, value });
            }
        }
        charts.push(summary);
    }
    let built = charts.iter().any(|c| c.status == "ok");
    out.json(
        "manifold.json",
        &ManifoldSummary {
            dims: (du, dc, ds),
            exponents: spec.exponents.clone(),
            ci: spec.ci.clone(),
            frame_coupling: builder.frame_coupling(),
            orbit,
            charts,
        },
    );
    if !built {
        return Err(rdslab::Error::Refused("no chart could be built for this spectrum".into()).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckGroup {
    name: String,
    count: usize,
    failures: usize,
    worst_margin: f64,
}

#[derive(Serialize)]
struct SeriesRow {
    alpha: f64,
    beta: f64,
    series: f64,
    majorant: f64,
    pass: bool,
}

#[derive(Serialize)]
struct BoundsReport {
    ensemble: usize,
    t_end: f64,
    failures: usize,
    groups: Vec<CheckGroup>,
    series: Vec<SeriesRow>,
    b_sup_moments: MomentReport,
    holder: Option<HolderReport>,
}

/// Draw `n` coordinates uniformly from `[-1, 1]`.
fn uniform_state(rng: &mut ChaCha20Rng, n: usize) -> StateVector {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn certify_bounds(cfg: &ExperimentConfig, s: &Setup, out: &mut Outputs, plots: &mut PlotResults) -> Result<()> {
    let r = &cfg.run;
    let nz = &cfg.noise;
    let n = s.model.n_modes();
    let mut rng = ChaCha20Rng::seed_from_u64(nz.seed);
    rng.set_stream(u64::MAX);
    let base = s.initial(cfg);
    let mut report = CertificationReport::default();
    let mut sample_of = Vec::new();
    let mut b_sup = Vec::with_capacity(r.ensemble);
    let mut holder = None;
    for i in 0..r.ensemble {
        let path = NoisePath::sample_stream(nz.dt, nz.t_minus, nz.t_plus, nz.q, nz.seed, i as u64 + 1)?;
        let rds = Rds::new(&s.model, &path, &s.nonlin)?;
        let view = path.view();
        let xi = &base + uniform_state(&mut rng, n) * 2.0;
        let other = &base + uniform_state(&mut rng, n) * 2.0;
        let a = apriori_bound_check(&rds, &view, &xi, r.t_end)?;
        b_sup.push(a.b_sup);
        report.push(BoundCheck::new("apriori", a.worst_excess, 0.0));
        let d = derivative_growth_bound(&rds, &view, &xi, r.t_end)?;
        report.push(BoundCheck::new("derivative_growth", d.norm, d.envelope));
        report.push(difference_bound_check(&rds, &view, &xi, &other, r.t_end, 4)?);
        sample_of.extend([i; 3]);
        if i == 0 {
            if let Some(h) = s.nonlin.holder() {
                let seps = [1e-1, 1e-2, 1e-3, 1e-4];
                holder = Some(holder_derivative_check(&rds, &view, &xi, &other, r.t_end, h.r, &seps)?);
            }
        }
    }
    let mut series = Vec::new();
    for alpha in [1.0, 1.5, 2.0] {
        for j in 1..=8 {
            let beta = 0.1 * j as f64;
            let sv = r_alpha_series(alpha, beta)?;
            let m = r_alpha(alpha, beta)?;
            series.push(SeriesRow { alpha, beta, series: sv, majorant: m, pass: sv <= m });
        }
    }
    let mut groups: Vec<CheckGroup> = Vec::new();
    for (c, &sample) in report.checks.iter().zip(&sample_of) {
        plots.bound_margins.push(MarginRow { sample, check: c.name.clone(), lhs: c.lhs, rhs: c.rhs, margin: c.margin });
        match groups.iter_mut().find(|g| g.name == c.name) {
            Some(g) => {
                g.count += 1;
                g.failures += usize::from(!c.pass);
                g.worst_margin = g.worst_margin.min(c.margin);
            }
            None => groups.push(CheckGroup {
                name: c.name.clone(),
                count: 1,
                failures: usize::from(!c.pass),
                worst_margin: c.margin,
            }),
        }
    }
    let failures = report.failures()
        + series.iter().filter(|x| !x.pass).count()
        + usize::from(holder.as_ref().is_some_and(|h| !h.pass));
    out.json(
        "bounds.json",
        &BoundsReport {
            ensemble: r.ensemble,
            t_end: r.t_end,
            failures,
            groups,
            series,
            b_sup_moments: moment_report(&b_sup, &[1.0, 2.0, 4.0, 8.0])?,
            holder,
        },
    );
    Ok(())
}

#[derive(Serialize)]
struct ConvergenceRow {
    forcing: &'static str,
    dt: f64,
    gap: f64,
    /// `log2` of this gap over the previous, finer one.
    order: Option<f64>,
}

fn convergence(cfg: &ExperimentConfig, s: &Setup, out: &mut Outputs) -> Result<()> {
    let r = &cfg.run;
    let nz = &cfg.noise;
    // a zero start would leave the noiseless run at rest
    let xi = match &cfg.run.initial {
        Some(x) => DVector::from_column_slice(x),
        None => DVector::from_fn(s.model.n_modes(), |k, _| 1.0 / (1.0 + k as f64)),
    };
    let zero = NoisePath::zero(nz.dt, nz.t_minus, nz.t_plus)?;
    let mut rows = Vec::new();
    for (forcing, fine) in [("noise", &s.path), ("zero", &zero)] {
        let mut finals = Vec::with_capacity(r.levels);
        for l in 0..r.levels {
            let p = fine.coarsen(1 << l)?;
            let rds = Rds::new(&s.model, &p, &s.nonlin)?;
            finals.push((p.dt(), rds.cocycle_apply(&p.view(), r.t_end, &xi)?));
        }
        let mut prev_gap: Option<f64> = None;
        for w in finals.windows(2) {
            let gap = (&w[1].1 - &w[0].1).norm();
            let order = prev_gap.filter(|p| *p > 0.0 && gap > 0.0).map(|p| (gap / p).log2());
            rows.push(ConvergenceRow { forcing, dt: w[1].0, gap, order });
            prev_gap = Some(gap);
        }
    }
    out.csv("convergence.csv", &["forcing", "dt", "gap", "order"], &rows)?;
    out.json("convergence.json", &rows);
    Ok(())
}
