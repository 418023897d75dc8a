//! Monte Carlo checks of the limit theorem, the moment bounds and the
//! convergence rates, each producing a [`VerificationReport`].

mod checks;
mod demo;
mod report;

pub use checks::*;
pub use demo::{oscillator_demo, OscillatorDemo};
pub use report::{Check, Provenance, Status, VerificationReport};
