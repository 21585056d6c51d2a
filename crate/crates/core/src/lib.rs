//! Design-based (finite-population) cluster-robust inference for M-estimators.
//!
//! The crate covers the full path from data to standard errors under one-way
//! and two-way clustered sampling or assignment:
//!
//! - [`data`]: cluster bookkeeping on two dimensions and sampling/assignment
//!   design descriptors.
//! - [`mestimation`]: OLS, probit, fixed-effects and triple-differences fits
//!   that expose per-unit scores and the Hessian average.
//! - [`variance`]: EHW, one-way Liang–Zeger, CGM and CGM2 sandwich estimators.
//! - [`shrinkage`]: covariate-projection adjustments that remove the part of
//!   the finite-population correction predictable from fixed attributes.
//! - [`ape`]: average partial effects with delta-method residuals.
//! - [`dgp`]: seeded simulation populations, two-stage Bernoulli sampling and
//!   exhaustive-enumeration oracles for tiny populations.
//! - [`montecarlo`]: replication driver producing SD / mean SE / coverage
//!   tables.

pub mod ape;
pub mod data;
pub mod dgp;
pub mod error;
pub mod linalg;
pub mod mestimation;
pub mod montecarlo;
pub mod shrinkage;
pub mod variance;

pub use error::{Error, Result};
