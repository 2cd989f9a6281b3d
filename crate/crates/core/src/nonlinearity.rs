//! Pointwise (Nemytskii) nonlinearities acting on spectral coefficients by
//! collocation on a midpoint grid with `4N` points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::spectral::{eigenfunction, SpectralModel, StateVector};

/// Named presets. `Table` interpolates `(u, g(u))` knots linearly and is held
/// constant outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityKind {
    Zero,
    Linear {
        c: f64,
    },
    ScaledTanh {
        a: f64,
    },
    /// `a·tanh(u)²`: bounded, with vanishing derivative at the origin.
    TanhSquared {
        a: f64,
    },
    Table {
        u: Vec<f64>,
        g: Vec<f64>,
    },
}

/// Hölder modulus of the derivative: `‖DG(x) - DG(y)‖ ≤ q‖x - y‖^r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderModulus {
    pub r: f64,
    pub q: f64,
}

/// Grid transform between coefficients and point values.
#[derive(Debug, Clone)]
struct Collocation {
    /// `points x modes`, entries `e_k(x_j)`.
    synth: DMatrix<f64>,
    /// `(π/M)·synthᵀ`.
    analysis: DMatrix<f64>,
}

impl Collocation {
    fn new(n: usize) -> Self {
        let m = 4 * n;
        let synth = DMatrix::from_fn(m, n, |j, k| eigenfunction(k, (j as f64 + 0.5) * PI / m as f64));
        let analysis = synth.transpose() * (PI / m as f64);
        Self { synth, analysis }
    }
}

#[derive(Debug, Clone)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    n_modes: usize,
    grid: Collocation,
    lipschitz: f64,
    bound: f64,
    growth: (f64, f64),
    holder: Option<HolderModulus>,
}

impl Nonlinearity {
    pub fn new(kind: NonlinearityKind, model: &SpectralModel) -> Result<Self> {
        let n = model.n_modes();
        let sqrt_pi = PI.sqrt();
        // sup |u(x)| ≤ sup_norm_factor · ‖u‖ on the truncated space
        let sup_norm_factor = ((2 * n - 1) as f64 / PI).sqrt();
        let (lipschitz, bound, growth, holder) = match &kind {
            NonlinearityKind::Zero => (0.0, 0.0, (0.0, 0.0), Some(HolderModulus { r: 1.0, q: 0.0 })),
            NonlinearityKind::Linear { c } => {
                check_finite("c", *c)?;
                (c.abs(), f64::INFINITY, (0.0, c.abs()), Some(HolderModulus { r: 1.0, q: 0.0 }))
            }
            NonlinearityKind::ScaledTanh { a } => {
                check_finite("a", *a)?;
                // sup |tanh''| = 4/(3√3)
                let second = 4.0 / (3.0 * 3f64.sqrt());
                (
                    a.abs(),
                    a.abs() * sqrt_pi,
                    (0.0, a.abs()),
                    Some(HolderModulus { r: 1.0, q: a.abs() * second * sup_norm_factor }),
                )
            }
            NonlinearityKind::TanhSquared { a } => {
                check_finite("a", *a)?;
                // d/du tanh² = 2 tanh sech², max 4/(3√3); second derivative bounded by 2
                let first = 4.0 / (3.0 * 3f64.sqrt());
                (
                    a.abs() * first,
                    a.abs() * sqrt_pi,
                    (0.0, a.abs() * first),
                    Some(HolderModulus { r: 1.0, q: 2.0 * a.abs() * sup_norm_factor }),
                )
            }
            NonlinearityKind::Table { u, g } => {
                if u.len() < 2 || u.len() != g.len() {
                    return Err(Error::param("table", "need at least two knots with matching values"));
                }
                if u.iter().chain(g).any(|x| !x.is_finite()) {
                    return Err(Error::param("table", "knots must be finite"));
                }
                if u.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::param("table", "knot abscissae must increase"));
                }
                let slope = u
                    .windows(2)
                    .zip(g.windows(2))
                    .map(|(du, dg)| ((dg[1] - dg[0]) / (du[1] - du[0])).abs())
                    .fold(0.0, f64::max);
                let gmax = g.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                let g0 = table_eval(u, g, 0.0).abs();
                (slope, gmax * sqrt_pi, (g0 * sqrt_pi, slope), None)
            }
        };
        Ok(Self { kind, n_modes: n, grid: Collocation::new(n), lipschitz, bound, growth, holder })
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }
    /// Global Lipschitz constant on the truncated space.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    /// `sup ‖g(x)‖` (infinite when unbounded).
    pub fn bound(&self) -> f64 {
        self.bound
    }
    /// `(κ₁, κ₂)` with `‖g(h)‖ ≤ κ₁ + κ₂‖h‖`.
    pub fn growth(&self) -> (f64, f64) {
        self.growth
    }
    /// Dominating polynomial of the derivative norm, `‖Dg(x)‖ ≤ p(‖x‖)`.
    /// All presets are globally Lipschitz, so `p` is the constant `L`.
    pub fn derivative_bound(&self, _norm: f64) -> f64 {
        self.lipschitz
    }
    pub fn holder(&self) -> Option<HolderModulus> {
        self.holder
    }

    fn pointwise(&self, u: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Zero => 0.0,
            NonlinearityKind::Linear { c } => c * u,
            NonlinearityKind::ScaledTanh { a } => a * u.tanh(),
            NonlinearityKind::TanhSquared { a } => {
                let t = u.tanh();
                a * t * t
            }
            NonlinearityKind::Table { u: us, g } => table_eval(us, g, u),
        }
    }

    fn pointwise_derivative(&self, u: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Zero => 0.0,
            NonlinearityKind::Linear { c } => *c,
            NonlinearityKind::ScaledTanh { a } => {
                let t = u.tanh();
                a * (1.0 - t * t)
            }
            NonlinearityKind::TanhSquared { a } => {
                let t = u.tanh();
                2.0 * a * t * (1.0 - t * t)
            }
            NonlinearityKind::Table { u: us, g } => table_slope(us, g, u),
        }
    }

    /// Mode-space action: synthesize, apply pointwise, project back.
    pub fn apply(&self, x: &StateVector) -> StateVector {
        match self.kind {
            NonlinearityKind::Zero => DVector::zeros(self.n_modes),
            NonlinearityKind::Linear { c } => x * c,
            _ => {
                let mut vals = &self.grid.synth * x;
                vals.apply(|v| *v = self.pointwise(*v));
                &self.grid.analysis * vals
            }
        }
    }

    /// Jacobian `Dg(x)` in mode coordinates.
    pub fn jacobian(&self, x: &StateVector) -> DMatrix<f64> {
        if let Some(j) = self.constant_jacobian() {
            return j;
        }
        let vals = &self.grid.synth * x;
        let mut weighted = self.grid.synth.clone();
        for (j, v) in vals.iter().enumerate() {
            let d = self.pointwise_derivative(*v);
            weighted.row_mut(j).scale_mut(d);
        }
        &self.grid.analysis * weighted
    }

    /// `Some(J)` when the Jacobian does not depend on the state.
    pub fn constant_jacobian(&self) -> Option<DMatrix<f64>> {
        match self.kind {
            NonlinearityKind::Zero => Some(DMatrix::zeros(self.n_modes, self.n_modes)),
            NonlinearityKind::Linear { c } => Some(DMatrix::identity(self.n_modes, self.n_modes) * c),
            _ => None,
        }
    }

    /// `g(0) = 0` and `Dg(0) = 0`.
    pub fn vanishes_to_second_order(&self) -> bool {
        let z = DVector::zeros(self.n_modes);
        self.apply(&z).amax() == 0.0 && self.jacobian(&z).amax() == 0.0
    }
}

fn check_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, "must be finite"))
    }
}

fn table_eval(u: &[f64], g: &[f64], x: f64) -> f64 {
    if x <= u[0] {
        return g[0];
    }
    if x >= u[u.len() - 1] {
        return g[g.len() - 1];
    }
    let i = u.partition_point(|v| *v <= x) - 1;
    let w = (x - u[i]) / (u[i + 1] - u[i]);
    g[i] + w * (g[i + 1] - g[i])
}

fn table_slope(u: &[f64], g: &[f64], x: f64) -> f64 {
    if x <= u[0] || x >= u[u.len() - 1] {
        return 0.0;
    }
    let i = u.partition_point(|v| *v <= x) - 1;
    (g[i + 1] - g[i]) / (u[i + 1] - u[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collocation_is_orthonormal() {
        let c = Collocation::new(8);
        let id = &c.analysis * &c.synth;
        assert!((id - DMatrix::identity(8, 8)).amax() < 1e-13);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = SpectralModel::build(6, 0.0, 0.5, 1.5).unwrap();
        for kind in [NonlinearityKind::ScaledTanh { a: 0.3 }, NonlinearityKind::TanhSquared { a: 0.3 }] {
            let g = Nonlinearity::new(kind, &m).unwrap();
            let x = DVector::from_fn(6, |k, _| 0.4 / (1.0 + k as f64));
            let j = g.jacobian(&x);
            let h = 1e-6;
            for c in 0..6 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let col = (g.apply(&xp) - g.apply(&xm)) / (2.0 * h);
                assert!((col - j.column(c)).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn table_interpolates() {
        let m = SpectralModel::build(2, 0.0, 0.5, 1.5).unwrap();
        let g = Nonlinearity::new(NonlinearityKind::Table { u: vec![-1.0, 1.0], g: vec![-0.5, 0.5] }, &m).unwrap();
        assert_eq!(g.lipschitz(), 0.5);
        assert!((g.pointwise(0.2) - 0.1).abs() < 1e-15);
        assert_eq!(g.pointwise(3.0), 0.5);
        assert!(g.holder().is_none());
    }
}
