//! Forecaster abstraction.
//!
//! A [`Forecaster`] turns a [`ForecastRequest`] into raw sample trajectories.
//! Callers go through [`forecast`] and [`reconstruct`], which apply the
//! shared policy: context truncation to `max_context`, capability checks,
//! output validation, and provenance seeding.

mod builtin;
pub mod conformance;
mod external;
pub mod mock;
pub mod protocol;

use std::collections::HashSet;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::SeedTree;
use crate::types::{CandidatePool, Forecast, Provenance, TimeSeries};

pub use builtin::{SeasonalAr, SeasonalArConfig, SyntheticBackendConfig, TwoPoint, TwoPointConfig};
pub use external::{spawn_external, spawn_external_pool, ExternalBackend, TranscriptLine};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("capability error: {0}")]
    Capability(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("backend output error: {0}")]
    Output(String),
    #[error("failed to spawn backend: {0}")]
    Spawn(String),
    #[error("handshake timed out after {0:?}")]
    HandshakeTimeout(Duration),
    #[error("protocol version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error on request {request_id}: {message}")]
    Transport { request_id: u64, message: String },
    #[error("backend error on request {id} ({code}): {message}")]
    Remote { id: u64, code: String, message: String },
}

/// Capability record for a forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub supports_temperature: bool,
    pub supports_top_p: bool,
    pub supports_reconstruction: bool,
    pub max_context: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRequest {
    pub context: TimeSeries,
    pub horizon: usize,
    pub num_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl ForecastRequest {
    pub fn new(context: TimeSeries, horizon: usize, num_samples: usize) -> Self {
        Self {
            context,
            horizon,
            num_samples,
            temperature: 0.0,
            top_p: 1.0,
            seed: 0,
        }
    }

    pub fn with_decode(mut self, temperature: f64, top_p: f64) -> Self {
        self.temperature = temperature;
        self.top_p = top_p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.horizon == 0 {
            return Err(BackendError::BadRequest("horizon must be >= 1".into()));
        }
        if self.num_samples == 0 {
            return Err(BackendError::BadRequest("num_samples must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::BadRequest(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::BadRequest(format!(
                "top_p {} must be in (0, 1]",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// Seed of candidate `index` under request seed `seed`.
pub fn candidate_seed(seed: u64, index: usize) -> u64 {
    SeedTree::new(seed).derive("cand", index as u64)
}

/// A probabilistic forecaster. Implementations receive requests whose context
/// already fits `max_context`; [`forecast`] and [`reconstruct`] enforce the rest.
pub trait Forecaster: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Returns `num_samples` trajectories of shape `[horizon][d_out]`.
    /// Candidate `i` must be a function of `candidate_seed(req.seed, i)`.
    fn sample(&self, req: &ForecastRequest) -> Result<Vec<Forecast>, BackendError>;

    /// One stochastic reconstruction of `context` at `temperature`.
    fn reconstruct_context(
        &self,
        context: &TimeSeries,
        temperature: f64,
        seed: u64,
    ) -> Result<TimeSeries, BackendError>;
}

static TEMPERATURE_WARNED: Mutex<Option<HashSet<String>>> = Mutex::new(None);

fn warn_once(name: &str, what: &str) {
    let mut guard = TEMPERATURE_WARNED.lock().unwrap_or_else(|e| e.into_inner());
    let seen = guard.get_or_insert_with(HashSet::new);
    if seen.insert(format!("{name}:{what}")) {
        log::warn!("backend {name} does not support {what}; the setting is ignored");
    }
}

/// Draws a candidate pool from `backend`.
///
/// Contexts longer than `max_context` keep their most recent points.
/// Unsupported temperature / top-p settings are ignored with a warning.
pub fn forecast(backend: &dyn Forecaster, req: &ForecastRequest) -> Result<CandidatePool, BackendError> {
    req.validate()?;
    let desc = backend.descriptor();
    if desc.max_context == 0 {
        return Err(BackendError::Capability("max_context is 0".into()));
    }
    if !desc.supports_temperature && req.temperature > 0.0 {
        warn_once(&desc.name, "temperature");
    }
    if !desc.supports_top_p && req.top_p < 1.0 {
        warn_once(&desc.name, "top_p");
    }
    let truncated;
    let req = if req.context.len() > desc.max_context {
        truncated = ForecastRequest {
            context: req.context.tail(desc.max_context),
            ..req.clone()
        };
        &truncated
    } else {
        req
    };
    if req.context.has_nan() {
        return Err(BackendError::BadRequest("context contains NaN values".into()));
    }

    let samples = backend.sample(req)?;
    if samples.len() != req.num_samples {
        return Err(BackendError::Output(format!(
            "expected {} samples, got {}",
            req.num_samples,
            samples.len()
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.horizon() != req.horizon {
            return Err(BackendError::Output(format!(
                "sample {i} has horizon {}, expected {}",
                s.horizon(),
                req.horizon
            )));
        }
        if s.channels() > req.context.channels() || s.channels() == 0 {
            return Err(BackendError::Output(format!(
                "sample {i} has {} channels for a {}-channel context",
                s.channels(),
                req.context.channels()
            )));
        }
    }
    let provenance = (0..samples.len())
        .map(|i| Provenance::unperturbed(candidate_seed(req.seed, i)))
        .collect();
    CandidatePool::new(samples, provenance).map_err(|e| BackendError::Output(e.to_string()))
}

/// Same-length stochastic reconstruction of `context`.
pub fn reconstruct(
    backend: &dyn Forecaster,
    context: &TimeSeries,
    temperature: f64,
    seed: u64,
) -> Result<TimeSeries, BackendError> {
    let desc = backend.descriptor();
    if !desc.supports_reconstruction {
        return Err(BackendError::Capability(format!(
            "backend {} does not support reconstruction",
            desc.name
        )));
    }
    if context.has_nan() {
        return Err(BackendError::BadRequest("context contains NaN values".into()));
    }
    let out = backend.reconstruct_context(context, temperature, seed)?;
    if out.len() != context.len() || out.channels() != context.channels() {
        return Err(BackendError::Output(format!(
            "reconstruction shape [{}][{}] differs from context [{}][{}]",
            out.len(),
            out.channels(),
            context.len(),
            context.channels()
        )));
    }
    Ok(out)
}

/// Builds a built-in backend from its configuration.
pub fn builtin(config: &SyntheticBackendConfig) -> Result<Box<dyn Forecaster>, BackendError> {
    Ok(match config {
        SyntheticBackendConfig::SeasonalAr(c) => Box::new(SeasonalAr::new(c.clone())?),
        SyntheticBackendConfig::TwoPoint(c) => Box::new(TwoPoint::new(c.clone())?),
    })
}
