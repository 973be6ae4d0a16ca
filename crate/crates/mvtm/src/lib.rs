//! Learning the joint distribution of a multivariate spatial field from a
//! small number of replicates.
//!
//! The model is a sparse triangular transport map. Field components are
//! ordered by a maximin rule in an augmented space (spatial coordinates plus
//! learned inter-process latent positions); each map component is a
//! Gaussian-process regression on a few previously ordered neighbors with an
//! inverse-Gamma noise prior; and the per-component hyperparameters are tied
//! together by smoothness-aware scaling rules so only a handful of global
//! parameters remain. Integrating the GP weights and the noise variance in
//! closed form yields Student-t predictives and a marginal likelihood that is
//! maximized by stochastic gradient ascent (empirical Bayes).
//!
//! Top-level entry points:
//! - [`simgen::simulate`] draws train/validation/test replicates from a
//!   synthetic nonlinear generator with known density;
//! - [`init::stage1`] fits a parametric Gaussian baseline and recovers latent
//!   process positions from its cross-correlations;
//! - [`train::fit`] runs the stochastic optimizer (strategies `cpp`, `fo`,
//!   `or`);
//! - [`map::FittedMap`] evaluates log densities, samples, and conditions;
//! - [`simgen::run_comparison`] produces the method-comparison table;
//! - [`commands`] holds the file-format glue used by the `mvtm` binary.
//!
//! All numerics are generic over [`scalar::Real`]; `f64` is used throughout
//! the command layer and is the recommended precision.

pub mod scalar;

pub mod error;

pub mod special;

pub mod data;

pub mod geometry;

pub mod prior;

pub mod likelihood;

pub mod opt;

pub mod map;

pub mod init;

pub mod train;

pub mod simgen;

pub mod config;

pub mod commands;

pub use config::RunConfig;
pub use data::{Dataset, SpatialLocation};
pub use error::{Error, Result};
pub use geometry::OrderingPlan;
pub use init::{ParametricFitConfig, ParametricParams};
pub use likelihood::ComponentSet;
pub use map::{FittedMap, MapMeta};
pub use prior::{ComponentPrior, HyperParams};
pub use scalar::Real;
pub use simgen::{ComparisonConfig, DgpConfig, TruthModel};
pub use train::{Strategy, TrainConfig};

/// Double-precision dataset, the precision used by the CLI.
pub type Dataset64 = Dataset<f64>;
/// Single-precision dataset.
pub type Dataset32 = Dataset<f32>;
/// Double-precision fitted map.
pub type FittedMap64 = FittedMap<f64>;
/// Single-precision fitted map.
pub type FittedMap32 = FittedMap<f32>;
/// Double-precision hyperparameter block.
pub type HyperParams64 = HyperParams<f64>;
/// Double-precision synthetic generator.
pub type TruthModel64 = TruthModel<f64>;
