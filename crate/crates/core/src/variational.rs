//! Linearized cocycle along a frozen trajectory.
//!
//! Differentiating the implicit step gives
//! `(I - diag(hφ₁(ah)) Dg(X_{n+1})) M_{n+1} = diag(e^{ah}) M_n`,
//! so the matrix is the exact derivative of the discrete cocycle.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::cocycle::Rds;
use crate::error::{Error, Result};
use crate::linalg::orthonormalize;
use crate::noise::ShiftView;
use crate::spectral::StateVector;

#[derive(Debug, Clone)]
pub struct CocycleMatrix {
    pub entries: DMatrix<f64>,
    /// Length of the time interval covered.
    pub t: f64,
    pub base_point: StateVector,
    /// Offset of the view the matrix was computed on.
    pub path_offset: f64,
}

/// Per-step propagators of the linearized scheme.
#[derive(Debug, Clone)]
pub(crate) struct StepLinearizer<'r, 'a> {
    rds: &'r Rds<'a>,
    constant: Option<DMatrix<f64>>,
}

impl<'r, 'a> StepLinearizer<'r, 'a> {
    pub(crate) fn new(rds: &'r Rds<'a>) -> Result<Self> {
        let constant = match rds.nonlin().constant_jacobian() {
            Some(j) => Some(Self::assemble(rds, &j)?),
            None => None,
        };
        Ok(Self { rds, constant })
    }

    pub(crate) fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    fn assemble(rds: &Rds<'_>, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = jac.nrows();
        let mut lhs = -jac.clone();
        for (k, g) in rds.gain().iter().enumerate() {
            lhs.row_mut(k).scale_mut(*g);
            lhs[(k, k)] += 1.0;
        }
        let rhs = DMatrix::from_diagonal(&DVector::from_column_slice(rds.decay()));
        let lu = lhs.lu();
        let out = lu.solve(&rhs).ok_or_else(|| Error::SingularOperator("implicit step Jacobian is singular".into()))?;
        debug_assert_eq!(out.nrows(), n);
        Ok(out)
    }

    /// Propagator of one step ending at the field value `x_next`.
    pub(crate) fn step(&self, x_next: &StateVector) -> Result<DMatrix<f64>> {
        match &self.constant {
            Some(m) => Ok(m.clone()),
            None => Self::assemble(self.rds, &self.rds.nonlin().jacobian(x_next)),
        }
    }

    /// Product of the step propagators over consecutive field values
    /// `fields[0], ..., fields[k]` (the first entry is the start point).
    pub(crate) fn block(&self, fields: &[StateVector]) -> Result<DMatrix<f64>> {
        let n = self.rds.model().n_modes();
        if let Some(m) = &self.constant {
            let mut out = DMatrix::identity(n, n);
            for _ in 1..fields.len() {
                out = m * out;
            }
            return Ok(out);
        }
        let mut out = DMatrix::identity(n, n);
        for x in &fields[1..] {
            out = self.step(x)? * out;
        }
        Ok(out)
    }
}

/// `D_ξ φ̃ᵗ_ω` as a dense matrix.
pub fn linearize(rds: &Rds<'_>, omega: &ShiftView<'_>, xi: &StateVector, t: f64) -> Result<CocycleMatrix> {
    let lin = StepLinearizer::new(rds)?;
    let n = rds.model().n_modes();
    let mut m = DMatrix::identity(n, n);
    let mut failure = None;
    rds.integrate(omega, xi, t, |k, v, y| {
        if k == 0 || failure.is_some() {
            return;
        }
        match lin.step(&(v + y)) {
            Ok(p) => m = &p * &m,
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(CocycleMatrix { entries: m, t, base_point: xi.clone(), path_offset: omega.offset_time() })
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub eps: f64,
    pub directions: usize,
    /// Per-direction relative error of the central difference.
    pub errors: Vec<f64>,
    pub max_rel_error: f64,
}

/// Central-difference check of [`linearize`] over `n_dirs` random
/// orthonormal directions.
pub fn fd_derivative_check(
    rds: &Rds<'_>,
    omega: &ShiftView<'_>,
    xi: &StateVector,
    t: f64,
    eps: f64,
    n_dirs: usize,
    seed: u64,
) -> Result<FdReport> {
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(Error::param("eps", format!("{eps} outside [1e-8, 1e-3]")));
    }
    if rds.nonlin().holder().is_none() {
        return Err(Error::Refused(
            "no Hölder modulus for the derivative; finite-difference tolerance undefined".into(),
        ));
    }
    let n = rds.model().n_modes();
    let k = n_dirs.clamp(1, n);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
    let dirs = orthonormalize(raw);
    let m = linearize(rds, omega, xi, t)?.entries;
    let mut errors = Vec::with_capacity(k);
    for j in 0..k {
        let eta: StateVector = dirs.column(j).into_owned();
        let plus = rds.cocycle_apply(omega, t, &(xi + &eta * eps))?;
        let minus = rds.cocycle_apply(omega, t, &(xi - &eta * eps))?;
        let fd = (plus - minus) / (2.0 * eps);
        let exact = &m * &eta;
        let scale = exact.norm();
        let err = (fd - &exact).norm();
        errors.push(if scale > 0.0 { err / scale } else { err });
    }
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(FdReport { eps, directions: k, errors, max_rel_error })
}
