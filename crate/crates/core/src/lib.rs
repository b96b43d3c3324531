//! Multiscale renormalization-group numerics for the two-dimensional lattice
//! Coulomb gas near the Berezinskii–Kosterlitz–Thouless transition.
//!
//! The crate is organised bottom-up:
//!
//! * [`special`]: exponential integrals, Bessel combinations, quadrature rules.
//! * [`lattice_green`]: periodic Yukawa/Coulomb potentials and the constant `c_E`.
//! * [`covariance`]: the scale-indexed covariance family `Γ_j` and `c̃_E`.
//! * [`rg_coefficients`]: per-scale flow coefficients as lattice sums.
//! * [`rg_flow`]: coupling flow, separatrix shooting, Kosterlitz ODE.
//! * [`charge_flow`]: fractional-charge renormalization constants.
//! * [`correlation`]: reconstruction and fitting of fractional-charge correlations.
//! * [`oracle`]: brute-force enumeration and Monte Carlo cross-checks.
//! * [`verify`]: the acceptance criteria with pinned tolerances.

// `!(x > 0.0)` guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod charge_flow;
pub mod correlation;
pub mod covariance;
pub mod error;
pub mod lattice_green;
pub mod oracle;
pub mod output;
pub mod rg_coefficients;
pub mod rg_flow;
pub mod special;
pub mod verify;

pub use charge_flow::{ChargeTrajectory, JumpInputs, LogReal, QMatrix, RenormState};
pub use correlation::{AsymptoticConstants, AsymptoticFit, CorrelationProfile, FitModel, ProfilePoint, ProfileSource};
pub use covariance::{CovarianceFamily, CutoffFunction, Direction};
pub use error::{Error, Result};
pub use lattice_green::{CeFit, LatticeSpec, Particle, ParticleConfig, PotentialTable};
pub use oracle::{EnumerationResult, Insertion, MCEstimate};
pub use rg_coefficients::{CoefficientTable, KernelFamily, KernelLabel, ScaleCoefficients, SumControl};
pub use rg_flow::{Classification, CouplingState, CouplingTrajectory, ODEState};

/// Version string written into every output header.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The marginal coupling `α² = 8π` of the BKT point at zero activity.
pub const ALPHA2_BKT: f64 = 8.0 * std::f64::consts::PI;
