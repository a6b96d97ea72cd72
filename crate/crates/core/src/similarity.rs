//! Cosine similarity between series, flattened time-major then channel.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::types::TimeSeries;

/// Whether series are compared in raw units or after a per-series z-score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityScale {
    #[default]
    Raw,
    ZScore,
}

/// `dot(a, b) / (|a| |b|)` over the flattened values of two equally shaped series.
pub fn cosine_similarity(a: &TimeSeries, b: &TimeSeries) -> Result<f64, CoreError> {
    cosine_similarity_scaled(a, b, SimilarityScale::Raw)
}

pub fn cosine_similarity_scaled(a: &TimeSeries, b: &TimeSeries, scale: SimilarityScale) -> Result<f64, CoreError> {
    if a.len() != b.len() || a.channels() != b.channels() {
        return Err(CoreError::dims(
            format!("[{}][{}]", a.len(), a.channels()),
            format!("[{}][{}]", b.len(), b.channels()),
        ));
    }
    match scale {
        SimilarityScale::Raw => cosine(a.flat(), b.flat()),
        SimilarityScale::ZScore => cosine(&zscore(a.flat()), &zscore(b.flat())),
    }
}

/// Cosine of two equal-length slices. A single zero vector yields 0.
/// NaN entries (masked values) count as zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, CoreError> {
    if a.len() != b.len() {
        return Err(CoreError::dims(a.len(), b.len()));
    }
    let clean = |v: f64| if v.is_nan() { 0.0 } else { v };
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (clean(x), clean(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 && nb == 0.0 {
        return Err(CoreError::UndefinedSimilarity);
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

fn zscore(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / std).collect()
}
