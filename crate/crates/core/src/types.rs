//! Value types shared by every module: the conditioning context, a forecast,
//! and a pool of candidate forecasts with per-candidate provenance.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// A length-`L`, `D`-channel real-valued sequence, stored time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    channels: usize,
    pub freq_hint: Option<String>,
    pub name: String,
}

impl TimeSeries {
    /// Builds a series from rows (`rows[t][d]`). Every row must have the same
    /// width and every value must be finite.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CoreError> {
        let channels = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || channels == 0 {
            return Err(CoreError::InvalidSeries("series needs L >= 1 and D >= 1".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * channels);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != channels {
                return Err(CoreError::dims(
                    format!("{channels} channels"),
                    format!("{} channels at t={t}", row.len()),
                ));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(values, channels)
    }

    /// Builds a univariate series.
    pub fn univariate(values: Vec<f64>) -> Result<Self, CoreError> {
        Self::from_flat(values, 1)
    }

    /// Builds a series from time-major flat storage.
    pub fn from_flat(values: Vec<f64>, channels: usize) -> Result<Self, CoreError> {
        let series = Self::from_flat_unchecked(values, channels)?;
        if let Some(i) = series.values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::InvalidSeries(format!(
                "non-finite value at t={}, d={}",
                i / channels,
                i % channels
            )));
        }
        Ok(series)
    }

    /// Shape-checked constructor that admits NaN entries. Used for the
    /// missing-data perturbation when the NaN sentinel is selected.
    pub(crate) fn from_flat_unchecked(values: Vec<f64>, channels: usize) -> Result<Self, CoreError> {
        if channels == 0 || values.is_empty() || !values.len().is_multiple_of(channels) {
            return Err(CoreError::InvalidSeries(format!(
                "{} values cannot form a series with {channels} channels",
                values.len()
            )));
        }
        Ok(Self {
            values,
            channels,
            freq_hint: None,
            name: String::new(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_freq_hint(mut self, hint: Option<String>) -> Self {
        self.freq_hint = hint;
        self
    }

    /// Copies name and frequency hint from `other`.
    pub(crate) fn with_meta_of(mut self, other: &TimeSeries) -> Self {
        self.name = other.name.clone();
        self.freq_hint = other.freq_hint.clone();
        self
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.channels + d]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    /// Flattened values, time-major then channel.
    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.channels).map(<[f64]>::to_vec).collect()
    }

    pub fn channel(&self, d: usize) -> Vec<f64> {
        self.values.iter().skip(d).step_by(self.channels).copied().collect()
    }

    /// Reassembles a series from per-channel vectors of equal length.
    pub fn from_channels(channels: &[Vec<f64>]) -> Result<Self, CoreError> {
        let series = Self::from_channels_unchecked(channels)?;
        Self::from_flat(series.values, series.channels)
    }

    pub(crate) fn from_channels_unchecked(channels: &[Vec<f64>]) -> Result<Self, CoreError> {
        let len = channels.first().map(Vec::len).unwrap_or(0);
        if channels.iter().any(|c| c.len() != len) {
            return Err(CoreError::InvalidSeries("channels differ in length".into()));
        }
        let mut values = Vec::with_capacity(len * channels.len());
        for t in 0..len {
            values.extend(channels.iter().map(|c| c[t]));
        }
        Self::from_flat_unchecked(values, channels.len())
    }

    /// The most recent `n` time steps (the whole series when `n >= L`).
    pub fn tail(&self, n: usize) -> TimeSeries {
        let skip = self.len().saturating_sub(n);
        TimeSeries {
            values: self.values[skip * self.channels..].to_vec(),
            channels: self.channels,
            freq_hint: self.freq_hint.clone(),
            name: self.name.clone(),
        }
    }

    /// Time steps `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            values: self.values[start * self.channels..end * self.channels].to_vec(),
            channels: self.channels,
            freq_hint: self.freq_hint.clone(),
            name: self.name.clone(),
        }
    }

    pub fn has_nan(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }
}

/// An `H`-step, `D_out`-channel forecast, stored time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    values: Vec<f64>,
    channels: usize,
}

impl Forecast {
    pub fn from_flat(values: Vec<f64>, channels: usize) -> Result<Self, CoreError> {
        if channels == 0 || values.is_empty() || !values.len().is_multiple_of(channels) {
            return Err(CoreError::InvalidSeries(format!(
                "{} values cannot form a forecast with {channels} channels",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidSeries("forecast contains non-finite values".into()));
        }
        Ok(Self { values, channels })
    }

    pub fn univariate(values: Vec<f64>) -> Result<Self, CoreError> {
        Self::from_flat(values, 1)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CoreError> {
        let channels = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(CoreError::InvalidSeries("ragged forecast rows".into()));
        }
        Self::from_flat(rows.concat(), channels)
    }

    pub fn horizon(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.channels).map(<[f64]>::to_vec).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.horizon(), self.channels)
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub candidate_seed: u64,
    /// Stable perturbation id, `"none"` for standard sampling.
    pub perturbation_id: String,
    pub perturbed_input_similarity: f64,
}

impl Provenance {
    pub fn unperturbed(candidate_seed: u64) -> Self {
        Self {
            candidate_seed,
            perturbation_id: "none".into(),
            perturbed_input_similarity: 1.0,
        }
    }
}

/// `N` candidate forecasts of identical shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    candidates: Vec<Forecast>,
    provenance: Vec<Provenance>,
}

impl CandidatePool {
    pub fn new(candidates: Vec<Forecast>, provenance: Vec<Provenance>) -> Result<Self, CoreError> {
        let first = candidates
            .first()
            .ok_or_else(|| CoreError::InvalidPool("a pool needs at least one candidate".into()))?;
        let shape = first.shape();
        if let Some(i) = candidates.iter().position(|c| c.shape() != shape) {
            return Err(CoreError::InvalidPool(format!(
                "candidate {i} has shape {:?}, expected {shape:?}",
                candidates[i].shape()
            )));
        }
        if provenance.len() != candidates.len() {
            return Err(CoreError::InvalidPool(format!(
                "{} provenance records for {} candidates",
                provenance.len(),
                candidates.len()
            )));
        }
        Ok(Self { candidates, provenance })
    }

    /// Pool with "none" provenance and zero seeds.
    pub fn from_candidates(candidates: Vec<Forecast>) -> Result<Self, CoreError> {
        let provenance = (0..candidates.len()).map(|_| Provenance::unperturbed(0)).collect();
        Self::new(candidates, provenance)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Forecast] {
        &self.candidates
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn shape(&self) -> (usize, usize) {
        self.candidates[0].shape()
    }

    pub fn into_parts(self) -> (Vec<Forecast>, Vec<Provenance>) {
        (self.candidates, self.provenance)
    }

    pub fn mean_similarity(&self) -> f64 {
        self.provenance
            .iter()
            .map(|p| p.perturbed_input_similarity)
            .sum::<f64>()
            / self.len() as f64
    }
}
