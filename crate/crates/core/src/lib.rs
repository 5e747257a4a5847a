//! Truncated-Fock simulation of photonic cat and grid (GKP) state preparation
//! by repeated conditional displacements from shaped electron energy combs.
//!
//! The library is organized bottom-up:
//! - [`fock`]: states, displacement/squeeze operators, quadratures, Wigner.
//! - [`electron`]: energy-comb wavefunctions and dispersion phase profiles.
//! - [`scatter`]: the joint electron-photon interaction, post-selection,
//!   and the analytic conditional-displacement branch operators.
//! - [`protocols`]: multi-step preparation schemes, the built-in preset
//!   catalog, closed-form branch probabilities, and the displacement-sum
//!   expansion that makes the big presets tractable.
//! - [`metrics`]: squeezing estimators, reference states, fidelity reports,
//!   coupling-jitter robustness.
//! - [`checks`]: the self-validation suite used by tests and the CLI.

pub mod checks;
pub mod electron;
pub mod error;
pub mod fock;
pub mod math;
pub mod metrics;
pub mod protocols;
pub mod scatter;

pub use error::{GkpError, Result};
