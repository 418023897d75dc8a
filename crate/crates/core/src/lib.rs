//! Simulation of fast-slow diffusions whose perturbation is localized near
//! the origin of a null-recurrent fast motion.
//!
//! The slow component follows an ODE `dy/dt = b1(y)` plus perturbations that
//! only act while the fast Brownian motion `W1/eps` sits in an O(1)
//! neighbourhood of zero. Deviations of order `sqrt(eps)` converge to a
//! linear equation driven by `V(t) = W2(L(t, 0))`, a Brownian motion run on
//! the local-time clock of an independent Brownian motion.
//!
//! Modules:
//! - [`paths`]: time grids, seeded Brownian paths, ensembles.
//! - [`coefficients`]: coefficient sets and the named catalog.
//! - [`deterministic`]: ODE flow, fundamental matrix, diffusion kernel.
//! - [`sde`]: Euler-Maruyama simulation of the prelimit systems.
//! - [`localtime`]: occupation and Tanaka local-time estimators.
//! - [`limit`]: the local-time-changed limit processes.
//! - [`timechange`]: random time change for non-unit fast diffusion.
//! - [`verify`]: Monte Carlo checks producing [`verify::VerificationReport`]s.

pub mod coefficients;
pub mod deterministic;
mod error;
pub mod limit;
pub mod localtime;
pub mod paths;
pub mod quadrature;
pub mod sde;
pub mod stats;
pub mod timechange;
pub mod verify;

pub use coefficients::{Catalog, CoefficientSet, Params};
pub use deterministic::{DiffusionKernel, FundamentalMatrix, OdeSolution};
pub use error::{Error, Result};
pub use limit::{FractionalKineticPath, LimitDeviationPath};
pub use localtime::LocalTimeCurve;
pub use paths::{SamplePath, SeedSpec, TimeGrid, TrajectoryEnsemble};
pub use sde::{CoupledTrajectory, EpsilonSchedule};
pub use timechange::TimeChange;
pub use verify::VerificationReport;
