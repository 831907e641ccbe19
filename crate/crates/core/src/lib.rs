//! Bayesian account of in-context learning dynamics.
//!
//! Task mixtures in three settings (balls & urns, linear regression,
//! classification), the Bayes-optimal memorizing and generalizing
//! predictors, distances that place a trained model between them,
//! compression-based complexity, and a hierarchical model whose posterior
//! odds trade fit against complexity along training.

pub mod complexity;
pub mod error;
pub mod hbayes;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod predictors;
pub mod rng;
pub mod stats;
pub mod taskgen;

pub use error::{Error, Result};
pub use hbayes::{DiversityTerms, FitParams, OddsInput};
pub use predictors::{PredictionSet, PredictiveOutput, PredictorKind};
pub use taskgen::{EvalMode, EvalSet, MixtureSpec, Sequence, SettingKind, TaskMixture};
