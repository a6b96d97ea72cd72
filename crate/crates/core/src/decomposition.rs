//! Additive seasonal-trend decomposition and the sequence primitives used by
//! the structure-aware perturbations (gradient, circular roll, local std).

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecompositionError {
    #[error("invalid period {0}: must be at least 2")]
    InvalidPeriod(usize),
    #[error("series of length {len} is too short for period {period} (need at least {})", 2 * period)]
    InsufficientLength { len: usize, period: usize },
    #[error("invalid length {0}: need at least 2 points")]
    InvalidLength(usize),
    #[error("invalid window {window} for length {len}: must be odd and in 1..=len")]
    InvalidWindow { window: usize, len: usize },
}

/// `x = trend + seasonal + residual`, elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
    pub period: usize,
}

/// Swappable decomposition backend. [`Classical`] is the only implementation
/// shipped; a Loess-based STL can slot in behind the same trait.
pub trait Decomposer: Send + Sync {
    fn decompose(&self, x: &[f64], period: usize) -> Result<Decomposition, DecompositionError>;
}

/// Classical additive moving-average decomposition.
#[derive(Debug, Clone, Copy, Default)]
pub struct Classical;

impl Decomposer for Classical {
    fn decompose(&self, x: &[f64], period: usize) -> Result<Decomposition, DecompositionError> {
        stl_decompose(x, period)
    }
}

/// Classical additive decomposition.
///
/// The trend is a centered moving average of width `period` (a 2x`period`
/// average when `period` is even), extended at both edges with the nearest
/// valid value. The seasonal component is the per-phase mean of
/// `x - trend` taken over the indices where the average is defined,
/// re-centered to zero mean and tiled. The residual absorbs the rest, so
/// reconstruction is exact up to rounding.
pub fn stl_decompose(x: &[f64], period: usize) -> Result<Decomposition, DecompositionError> {
    if period < 2 {
        return Err(DecompositionError::InvalidPeriod(period));
    }
    let len = x.len();
    if len < 2 * period {
        return Err(DecompositionError::InsufficientLength { len, period });
    }

    // Average deviations from an anchor so constant inputs decompose exactly.
    let anchor = x[0];
    let dev: Vec<f64> = x.iter().map(|v| v - anchor).collect();
    let half = period / 2;
    let weights: Vec<f64> = if period % 2 == 1 {
        vec![1.0 / period as f64; period]
    } else {
        let mut w = vec![1.0 / period as f64; period + 1];
        w[0] = 0.5 / period as f64;
        w[period] = 0.5 / period as f64;
        w
    };

    let first = half;
    let last = len - 1 - half;
    let mut trend = vec![0.0; len];
    for t in first..=last {
        let window = &dev[t - half..t - half + weights.len()];
        trend[t] = anchor + window.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>();
    }
    for t in 0..first {
        trend[t] = trend[first];
    }
    for t in last + 1..len {
        trend[t] = trend[last];
    }

    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for t in first..=last {
        sums[t % period] += x[t] - trend[t];
        counts[t % period] += 1;
    }
    let mut profile: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let level = profile.iter().sum::<f64>() / period as f64;
    profile.iter_mut().for_each(|v| *v -= level);

    let seasonal: Vec<f64> = (0..len).map(|t| profile[t % period]).collect();
    let residual: Vec<f64> = (0..len).map(|t| x[t] - trend[t] - seasonal[t]).collect();
    Ok(Decomposition {
        trend,
        seasonal,
        residual,
        period,
    })
}

/// Central differences in the interior, one-sided differences at the ends.
pub fn gradient(x: &[f64]) -> Result<Vec<f64>, DecompositionError> {
    let len = x.len();
    if len < 2 {
        return Err(DecompositionError::InvalidLength(len));
    }
    let mut out = vec![0.0; len];
    out[0] = x[1] - x[0];
    out[len - 1] = x[len - 1] - x[len - 2];
    for t in 1..len - 1 {
        out[t] = (x[t + 1] - x[t - 1]) / 2.0;
    }
    Ok(out)
}

/// Circular shift: element `i` moves to `(i + k) mod L`.
pub fn roll(x: &[f64], k: i64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let len = x.len() as i64;
    let shift = k.rem_euclid(len) as usize;
    let mut out = x.to_vec();
    out.rotate_right(shift);
    out
}

/// Population standard deviation over a centered window of odd width `window`,
/// clipped at the boundaries.
pub fn local_std(x: &[f64], window: usize) -> Result<Vec<f64>, DecompositionError> {
    let len = x.len();
    if window == 0 || window > len || window.is_multiple_of(2) {
        return Err(DecompositionError::InvalidWindow { window, len });
    }
    let half = window / 2;
    Ok((0..len)
        .map(|t| {
            let w = &x[t.saturating_sub(half)..(t + half + 1).min(len)];
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        })
        .collect())
}

/// Seasonal period implied by a frequency hint: hourly data cycles daily (24),
/// 15-minute data cycles daily (96). Anything else falls back to 24.
pub fn period_for_freq(freq_hint: Option<&str>) -> usize {
    match freq_hint.map(|s| s.trim().to_ascii_lowercase()) {
        Some(f) if f == "15min" || f == "15t" || f == "15m" => 96,
        Some(f) if f == "30min" || f == "30t" => 48,
        Some(f) if f == "10min" || f == "10t" => 144,
        Some(f) if f == "d" || f == "1d" || f == "daily" => 7,
        _ => 24,
    }
}
