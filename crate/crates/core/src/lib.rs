//! Robust Poisson regression with transformed M-estimators.
//!
//! Estimation works on variance-stabilized responses `t(y) = 2 sqrt(y)`,
//! centered by the Fisher-consistent function `m(mu)`. The crate provides:
//!
//! - the transformed least squares estimator (LST) and the redescending
//!   MT-estimator, both via iteratively reweighted least squares;
//! - principal sensitivity components for masking-proof outlier diagnostics;
//! - a deterministic two-stage robust initial estimator built from them,
//!   and the full FMT pipeline (initializer + MT fit);
//! - maximum likelihood and random-subsampling (SMT) baselines;
//! - a Monte Carlo harness for estimator comparison under contamination.

pub mod data;
pub mod error;
pub mod families;
pub mod lst;
pub mod mloss;
pub mod sensitivity;

#[cfg(test)]
pub(crate) mod testutil;

pub use data::{loss_objective, Dataset, FitOptions, FitResult};
pub use error::{Error, Result};
pub use families::{t_transform, PoissonLogModel};
pub use lst::{lst_fit, lst_onestep};
pub use mloss::{m_value, GridConfig, LossSpec, MTable, DEFAULT_TUNING_CONSTANT};
