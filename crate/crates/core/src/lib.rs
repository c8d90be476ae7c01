//! Growth-rate laboratory for periodic age-structured cell division models.
//!
//! The population density `n(t, x)` over age `x` obeys a transport equation
//! with division rate `K(t, x)` and the nonlocal boundary condition
//! `n(t, 0) = 2 ∫ K(t, x) n(t, x) dx`. Four independent routes to the
//! Floquet growth rate live here:
//!
//! * [`pde`] — monotone characteristic scheme plus power iteration on the
//!   one-period monodromy operator (direct and adjoint problems);
//! * [`generational`] — the triangular by-generation system whose
//!   reaggregation `n = Σ 2^i n_i` reproduces the direct solution;
//! * [`exact`] — closed forms: the 2x2 switched-matrix counter-example,
//!   the constant-modulation implicit equation, and the discretized
//!   renewal operator with its `rho(lambda) = 1` root;
//! * [`staircase`] — the exact instantaneous-division limit: a staircase
//!   in the majority age, driven by window-hitting combinatorics.

pub mod error;
pub mod exact;
pub mod generational;
pub mod model;
pub mod pde;
mod rational;
pub mod staircase;

pub use error::{Error, Result};
pub use exact::{Matrix2, TwoPhaseRates};
pub use model::{
    AgeModulation, DensityField, DivisionKernel, Grid, MonotonicityReport, RateModel,
    TimeModulation,
};
pub use pde::{AdjointResult, FloquetResult};
pub use staircase::{JumpTrajectory, StaircaseResult};
