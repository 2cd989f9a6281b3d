//! Spectral laboratory for a heat equation on `(0, π)` driven by white noise
//! in the Neumann boundary flux, viewed as a random dynamical system.
//!
//! The pieces build on each other:
//!
//! * [`spectral`]: truncated operator, semigroup, boundary kernel, resolvent.
//! * [`noise`]: two-sided Wiener increments, the grid shift, the stationary
//!   Ornstein-Uhlenbeck field.
//! * [`cocycle`]: random PDE solver and the nonlinear/linear cocycles.
//! * [`variational`]: linearized cocycle and finite-difference validation.
//! * [`lyapunov`]: Benettin exponents and the Oseledets splitting.
//! * [`stationary`] and [`manifolds`]: random stationary point and local
//!   stable/unstable/center charts.
//! * [`bounds`] and [`volterra`]: fractional Gronwall machinery and checks of
//!   the a priori estimates.

pub mod bounds;
pub mod cocycle;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod manifolds;
pub mod noise;
pub mod nonlinearity;
pub mod quadrature;
pub mod spectral;
pub mod stationary;
pub mod variational;
pub mod volterra;

pub use cocycle::{Rds, SolverOptions, Trajectory};
pub use error::{Error, Result};
pub use noise::{NoisePath, OuProcess, ShiftView};
pub use nonlinearity::{Nonlinearity, NonlinearityKind};
pub use spectral::{BoundaryDatum, ModelConfig, SpectralModel, StateVector};
