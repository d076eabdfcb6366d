//! Steady-state power grid analysis under interchangeable aggregated load
//! models.
//!
//! The crate solves AC power flow (Newton-Raphson on rectangular
//! current-injection residuals) and AC optimal power flow (primal-dual
//! interior point) for networks whose loads may be any mix of PQ, ZIP, BIG,
//! or constant-admittance models. Loads are classified as power-type or
//! impedance-type from their voltage sensitivities, model parameters can be
//! fitted to measurement time series with optimal segmentation, and the
//! [`harness`] module runs cross-model comparison experiments over a
//! segmented case.

pub mod fit;
pub mod harness;
pub mod io;
mod linalg;
pub mod loads;
pub mod network;
pub mod opf;
pub mod pf;
pub mod synth;

pub use loads::{LoadModel, OperatingVoltage};
pub use network::{GridCase, ValidatedCase};
