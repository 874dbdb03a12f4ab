//! Falsification of the no-unmeasured-confounding assumption on
//! multi-environment observational data.
//!
//! The central test ([`mint::mint_test`]) fits treatment and outcome working
//! models separately in every environment and tests whether the fitted
//! mechanism parameters are independent across environments. Unmeasured
//! confounding makes them dependent.

pub use nalgebra;

pub mod baselines;
pub mod dataset;
pub mod dgp;
pub mod error;
pub mod estimation;
pub mod features;
pub mod format;
pub mod harness;
pub mod kernel_mint;
mod linalg;
pub mod mint;
pub mod rng;

pub use dataset::{EnvironmentBlock, MultiEnvDataset};
pub use error::{MintError, Result};
pub use estimation::{fit_mechanisms, least_squares_fit, MechanismEstimates};
pub use features::{build_outcome_features, build_treatment_features, FeatureKind, FeatureSpec};
pub use mint::{
    bootstrap_refit, calibrate_threshold, frobenius_statistic, mint_test, MintConfig, TestMethod,
    TestResult,
};
