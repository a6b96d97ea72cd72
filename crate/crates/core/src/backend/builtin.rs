//! Built-in synthetic forecasters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{candidate_seed, BackendDescriptor, BackendError, ForecastRequest, Forecaster};
use crate::seed::rng_from_seed;
use crate::types::{Forecast, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticBackendConfig {
    SeasonalAr(SeasonalArConfig),
    TwoPoint(TwoPointConfig),
}

/// Seasonal profile plus AR(q) residual, fitted to each context channel.
///
/// With `mu` the context mean, `s` the per-phase mean profile of the context
/// and `sigma` its standard deviation, each channel follows
///
/// ```text
/// x_t = mu + beta * s[t mod p] + e_t,   e_t = sum_k a_k e_{t-k} + tau * noise_scale * sigma * xi_t
/// ```
///
/// with `xi_t ~ N(0, 1)`. At `tau = 0` the recursion is deterministic, and the
/// per-step sample std is exactly linear in `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeasonalArConfig {
    pub ar_coefficients: Vec<f64>,
    pub period: usize,
    pub seasonal_weight: f64,
    pub noise_scale: f64,
    pub max_context: usize,
    pub d_out: usize,
}

impl Default for SeasonalArConfig {
    fn default() -> Self {
        Self {
            ar_coefficients: vec![0.6, 0.2],
            period: 24,
            seasonal_weight: 1.0,
            noise_scale: 0.5,
            max_context: 4096,
            d_out: 1,
        }
    }
}

pub struct SeasonalAr {
    config: SeasonalArConfig,
    descriptor: BackendDescriptor,
}

struct ChannelFit {
    mean: f64,
    scale: f64,
    profile: Vec<f64>,
    /// Deseasonalized deviations of the context.
    residuals: Vec<f64>,
}

impl SeasonalAr {
    pub fn new(config: SeasonalArConfig) -> Result<Self, BackendError> {
        if !(config.noise_scale >= 0.0 && config.noise_scale.is_finite()) {
            return Err(BackendError::BadRequest("noise_scale must be >= 0".into()));
        }
        if config.period == 0 || config.max_context == 0 || config.d_out == 0 {
            return Err(BackendError::BadRequest(
                "period, max_context and d_out must be >= 1".into(),
            ));
        }
        let descriptor = BackendDescriptor {
            name: "seasonal-ar".into(),
            supports_temperature: true,
            supports_top_p: false,
            supports_reconstruction: true,
            max_context: config.max_context,
            d_out: config.d_out,
        };
        Ok(Self { config, descriptor })
    }

    fn fit(&self, x: &[f64]) -> ChannelFit {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let p = self.config.period;
        let mut sums = vec![0.0; p];
        let mut counts = vec![0usize; p];
        for (t, v) in x.iter().enumerate() {
            sums[t % p] += v - mean;
            counts[t % p] += 1;
        }
        let profile: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        let beta = self.config.seasonal_weight;
        let residuals = x
            .iter()
            .enumerate()
            .map(|(t, v)| v - mean - beta * profile[t % p])
            .collect();
        ChannelFit {
            mean,
            scale: if std > 0.0 { std } else { 1.0 },
            profile,
            residuals,
        }
    }

    fn ar_mean(&self, history: &[f64]) -> f64 {
        self.config
            .ar_coefficients
            .iter()
            .enumerate()
            .map(|(k, a)| match history.len().checked_sub(k + 1) {
                Some(idx) => a * history[idx],
                None => 0.0,
            })
            .sum()
    }

    fn simulate_channel(
        &self,
        fit: &ChannelFit,
        start: usize,
        horizon: usize,
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let p = self.config.period;
        let beta = self.config.seasonal_weight;
        let mut history = fit.residuals.clone();
        let mut out = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let t = start + h;
            let mut e = self.ar_mean(&history);
            if sigma > 0.0 {
                let xi: f64 = rng.sample(StandardNormal);
                e += sigma * xi;
            }
            history.push(e);
            out.push(fit.mean + beta * fit.profile[t % p] + e);
        }
        out
    }
}

impl Forecaster for SeasonalAr {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn sample(&self, req: &ForecastRequest) -> Result<Vec<Forecast>, BackendError> {
        let ctx = &req.context;
        let d_out = self.config.d_out.min(ctx.channels());
        let fits: Vec<ChannelFit> = (0..d_out).map(|d| self.fit(&ctx.channel(d))).collect();
        (0..req.num_samples)
            .map(|i| {
                let mut rng = rng_from_seed(candidate_seed(req.seed, i));
                let channels: Vec<Vec<f64>> = fits
                    .iter()
                    .map(|fit| {
                        let sigma = req.temperature * self.config.noise_scale * fit.scale;
                        self.simulate_channel(fit, ctx.len(), req.horizon, sigma, &mut rng)
                    })
                    .collect();
                let flat: Vec<f64> = (0..req.horizon)
                    .flat_map(|h| channels.iter().map(move |c| c[h]))
                    .collect();
                Forecast::from_flat(flat, d_out).map_err(|e| BackendError::Output(e.to_string()))
            })
            .collect()
    }

    fn reconstruct_context(
        &self,
        context: &TimeSeries,
        temperature: f64,
        seed: u64,
    ) -> Result<TimeSeries, BackendError> {
        let mut rng = rng_from_seed(seed);
        let p = self.config.period;
        let beta = self.config.seasonal_weight;
        let channels: Vec<Vec<f64>> = (0..context.channels())
            .map(|d| {
                let fit = self.fit(&context.channel(d));
                let sigma = temperature * self.config.noise_scale * fit.scale;
                (0..context.len())
                    .map(|t| {
                        let mut e = self.ar_mean(&fit.residuals[..t]);
                        if sigma > 0.0 {
                            let xi: f64 = rng.sample(StandardNormal);
                            e += sigma * xi;
                        }
                        fit.mean + beta * fit.profile[t % p] + e
                    })
                    .collect()
            })
            .collect();
        TimeSeries::from_channels(&channels)
            .map(|s| s.with_meta_of(context))
            .map_err(|e| BackendError::Output(e.to_string()))
    }
}

/// Two-point forecaster: each candidate is the "good" forecast with
/// probability `rho`, the "bad" one otherwise, independently of the context.
///
/// Forecasts are `anchor + shift` (constant shift over the horizon); scored
/// against `anchor`, the loss is exactly `shift^2`. An empty anchor means zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPointConfig {
    pub rho: f64,
    pub good_shift: f64,
    pub bad_shift: f64,
    #[serde(default)]
    pub anchor: Vec<f64>,
}

impl TwoPointConfig {
    /// Shifts chosen so that MSE against the anchor is `loss_good` / `loss_bad`.
    pub fn from_losses(rho: f64, loss_good: f64, loss_bad: f64) -> Self {
        Self {
            rho,
            good_shift: loss_good.max(0.0).sqrt(),
            bad_shift: loss_bad.max(0.0).sqrt(),
            anchor: Vec::new(),
        }
    }
}

pub struct TwoPoint {
    config: TwoPointConfig,
    descriptor: BackendDescriptor,
}

impl TwoPoint {
    pub fn new(config: TwoPointConfig) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&config.rho) {
            return Err(BackendError::BadRequest(format!("rho {} outside [0, 1]", config.rho)));
        }
        if !config.good_shift.is_finite() || !config.bad_shift.is_finite() {
            return Err(BackendError::BadRequest("shifts must be finite".into()));
        }
        let descriptor = BackendDescriptor {
            name: "two-point".into(),
            supports_temperature: false,
            supports_top_p: false,
            supports_reconstruction: false,
            max_context: usize::MAX / 2,
            d_out: 1,
        };
        Ok(Self { config, descriptor })
    }

    /// Whether candidate `index` under `seed` draws the good forecast.
    pub fn is_good(&self, seed: u64, index: usize) -> bool {
        let mut rng = rng_from_seed(candidate_seed(seed, index));
        rng.random::<f64>() < self.config.rho
    }
}

impl Forecaster for TwoPoint {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn sample(&self, req: &ForecastRequest) -> Result<Vec<Forecast>, BackendError> {
        let anchor = &self.config.anchor;
        if !anchor.is_empty() && anchor.len() != req.horizon {
            return Err(BackendError::BadRequest(format!(
                "anchor has length {}, horizon is {}",
                anchor.len(),
                req.horizon
            )));
        }
        (0..req.num_samples)
            .map(|i| {
                let shift = if self.is_good(req.seed, i) {
                    self.config.good_shift
                } else {
                    self.config.bad_shift
                };
                let values = (0..req.horizon)
                    .map(|h| anchor.get(h).copied().unwrap_or(0.0) + shift)
                    .collect();
                Forecast::univariate(values).map_err(|e| BackendError::Output(e.to_string()))
            })
            .collect()
    }

    fn reconstruct_context(&self, _: &TimeSeries, _: f64, _: u64) -> Result<TimeSeries, BackendError> {
        Err(BackendError::Capability("two-point backend cannot reconstruct".into()))
    }
}
