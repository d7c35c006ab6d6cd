//! Online region-of-attraction estimation for differential-algebraic
//! power-system models.
//!
//! The pipeline: simulate trajectories of a DAE ([`dae`], [`trajectory`]),
//! turn stable ones into converse-Lyapunov samples, learn the Lyapunov
//! function with a sliding-window online Gaussian process ([`gp`]), and read
//! off a confidence-bounded level set as the region-of-attraction estimate
//! ([`assessment`]).
//!
//! [`model`] reads model files and runs disturbance scenarios; [`export`]
//! writes the CSV and snapshot artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod assessment;
pub mod dae;
pub mod error;
pub mod export;
pub mod gp;
pub mod model;
pub mod normal;
pub mod systems;
pub mod trajectory;

pub use assessment::{run_assessment, run_assessment_streaming, AssessmentConfig, RoaEstimate};
pub use dae::microgrid::{microgrid_build, MicrogridConfig, MicrogridModel};
pub use dae::{DaeModel, DaeSystem, Equilibrium, FnModel, Jacobians, ReducedJacobian};
pub use error::{Error, Result};
