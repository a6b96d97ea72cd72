//! Diversified inference-time scaling for probabilistic time-series forecasters.
//!
//! The crate is forecaster-agnostic: a [`backend::Forecaster`] produces candidate
//! forecasts, [`perturbation`] diversifies the conditioning context, [`engine`]
//! builds candidate pools and aggregates them (best-of-N and elementwise median),
//! [`metrics`] turns sweeps into RobustMSE reports and failure verdicts, and
//! [`theory`] holds the closed forms and Monte Carlo estimators for the
//! expected-minimum model.

pub mod backend;
pub mod decomposition;
pub mod engine;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod perturbation;
pub mod seed;
pub mod similarity;
pub mod theory;
pub mod types;

pub use error::CoreError;
pub use seed::SeedTree;
pub use types::{CandidatePool, Forecast, Provenance, TimeSeries};
