//! Generalization certificates for Bayesian linear regression.
//!
//! This crate computes high-probability upper bounds on the
//! posterior-averaged squared prediction error of linear predictors, for
//! three data-generating processes: isotropic Gaussian inputs, correlated
//! Gaussian inputs, and scalar ARX time series recast as regression on
//! lagged outputs and inputs. It also ships the Monte Carlo harnesses that
//! verify the bounds empirically: coverage experiments, bound comparisons,
//! convergence sweeps, and spectral diagnostics for the dependent-data case.
//!
//! The pieces:
//!
//! - [`model`]: data models, losses, closed-form generalization losses;
//! - [`posterior`]: Gibbs posterior, Gaussian KL, posterior-averaged losses;
//! - [`datagen`]: seeded samplers, ARX simulation, recasting, CSV I/O;
//! - [`spectral`]: stationary ARX covariances, joint covariance spectra;
//! - [`bounds`]: complexity terms and certificate assembly;
//! - [`experiments`]: coverage and sweep harnesses;
//! - [`config`] / [`cli`]: the JSON run configuration and the `pacb` binary.

pub mod bounds;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numeric;
pub mod posterior;
pub mod seed;
pub mod spectral;

pub use bounds::{BoundCertificate, BoundKind, PriorSpec, PsiEstimate, PsiMethod};
pub use error::{Error, Result};
pub use model::{ArxModel, CorrelatedModel, DataModel, Dataset, IidModel};
pub use posterior::GaussianWeightMeasure;
pub use seed::SeedSpec;
