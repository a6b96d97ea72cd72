//! Expected-minimum model of best-of-N selection.
//!
//! A diversified sampler yields loss `loss_good` with probability `rho` and
//! `loss_bad` otherwise; standard sampling sits at the constant `loss_0`.
//! The minimum of `N` i.i.d. draws has expectation
//! `(1 - rho)^N * loss_bad + (1 - (1 - rho)^N) * loss_good`, which drops
//! below `loss_0` exactly when `N` exceeds
//! `ln((loss_bad - loss_good) / (loss_0 - loss_good)) / ln(1 / (1 - rho))`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{rng_from_seed, SeedTree};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("support assumption violated: {0}")]
    Assumption(String),
    #[error("no crossover found up to N = {0}")]
    NoCrossover(usize),
}

type Result<T> = std::result::Result<T, TheoryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub rho: f64,
    pub loss_good: f64,
    pub loss_bad: f64,
    pub loss_0: f64,
}

impl TheoryParams {
    pub fn new(rho: f64, loss_good: f64, loss_bad: f64, loss_0: f64) -> Self {
        Self {
            rho,
            loss_good,
            loss_bad,
            loss_0,
        }
    }

    fn check_rho_closed(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(TheoryError::InvalidParams(format!("rho {} outside [0, 1]", self.rho)));
        }
        if !(self.loss_good.is_finite() && self.loss_bad.is_finite()) {
            return Err(TheoryError::InvalidParams("losses must be finite".into()));
        }
        Ok(())
    }

    /// `0 < rho < 1` and `loss_good < loss_0 <= loss_bad`.
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(TheoryError::InvalidParams(format!("rho {} outside (0, 1)", self.rho)));
        }
        if !(self.loss_good < self.loss_0 && self.loss_0 <= self.loss_bad) {
            return Err(TheoryError::InvalidParams(format!(
                "need loss_good < loss_0 <= loss_bad, got {} / {} / {}",
                self.loss_good, self.loss_0, self.loss_bad
            )));
        }
        Ok(())
    }

    /// The two-point loss distribution of a single diversified draw.
    pub fn distribution(&self) -> DiscreteLoss {
        DiscreteLoss {
            values: vec![self.loss_good, self.loss_bad],
            probs: vec![self.rho, 1.0 - self.rho],
        }
    }
}

/// Budget above which diversified best-of-N beats the baseline in expectation.
pub fn critical_threshold(p: &TheoryParams) -> Result<f64> {
    p.validate()?;
    let ratio = (p.loss_bad - p.loss_good) / (p.loss_0 - p.loss_good);
    Ok(ratio.ln() / (1.0 / (1.0 - p.rho)).ln())
}

/// Closed-form expected minimum loss over `n` diversified draws.
pub fn expected_min_em(p: &TheoryParams, n: usize) -> Result<f64> {
    p.check_rho_closed()?;
    if n == 0 {
        return Err(TheoryError::InvalidParams("N must be >= 1".into()));
    }
    let miss = (1.0 - p.rho).powi(n as i32);
    Ok(miss * p.loss_bad + (1.0 - miss) * p.loss_good)
}

/// A finite loss distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLoss {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl DiscreteLoss {
    /// Uniform over `values`.
    pub fn uniform(values: &[f64]) -> Self {
        let p = 1.0 / values.len() as f64;
        Self {
            values: values.to_vec(),
            probs: vec![p; values.len()],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.probs.len() {
            return Err(TheoryError::InvalidParams(
                "values and probs must be non-empty and equal length".into(),
            ));
        }
        if self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(TheoryError::InvalidParams("probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TheoryError::InvalidParams(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    /// Support points with positive mass.
    pub fn support(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(v, _)| *v)
            .collect()
    }

    pub fn infimum(&self) -> f64 {
        self.support().into_iter().fold(f64::INFINITY, f64::min)
    }

    fn draw_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding in the cumulative sum: fall back to the last positive-mass point.
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

/// Monte Carlo estimate of an expectation with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

const CHUNK: usize = 4096;

/// Minimum of one pool of `n` draws from `dist`.
pub fn sample_pool_min(dist: &DiscreteLoss, n: usize, rng: &mut impl Rng) -> f64 {
    let floor = dist.infimum();
    let mut best = f64::INFINITY;
    for _ in 0..n {
        let v = dist.values[dist.draw_index(rng.random::<f64>())];
        if v < best {
            best = v;
            if best <= floor {
                break;
            }
        }
    }
    best
}

/// Mean and standard error of the pool minimum over `trials` pools of `n` draws.
///
/// Trials run in fixed-size chunks with per-chunk derived seeds; the minimum is
/// always a support point, so the reduction tallies counts per support point
/// and is exact regardless of thread schedule.
pub fn mc_expected_min_dist(dist: &DiscreteLoss, n: usize, trials: usize, seed: u64) -> Result<McEstimate> {
    dist.validate()?;
    if trials == 0 || n == 0 {
        return Err(TheoryError::InvalidParams("trials and N must be >= 1".into()));
    }
    let tree = SeedTree::new(seed);
    let chunks = trials.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(tree.derive("mc-chunk", c as u64));
            let size = CHUNK.min(trials - c * CHUNK);
            let mut local = vec![0u64; dist.values.len()];
            for _ in 0..size {
                let m = sample_pool_min(dist, n, &mut rng);
                let idx = dist
                    .values
                    .iter()
                    .position(|v| *v == m)
                    .expect("minimum is a support point");
                local[idx] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; dist.values.len()],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let total = trials as f64;
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let mean = weighted_sum(&dist.values, &freqs);
    let var_pop: f64 = dist
        .values
        .iter()
        .zip(&freqs)
        .map(|(v, q)| q * (v - mean) * (v - mean))
        .sum();
    let std_err = if trials > 1 {
        (var_pop * total / (total - 1.0) / total).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { mean, std_err, trials })
}

/// Kahan-compensated `sum(values[i] * weights[i])`, skipping zero weights so a
/// degenerate distribution returns its single value exactly.
fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (v, w) in values.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let y = v * w - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Monte Carlo estimate of [`expected_min_em`].
pub fn mc_expected_min(p: &TheoryParams, n: usize, trials: usize, seed: u64) -> Result<McEstimate> {
    p.check_rho_closed()?;
    mc_expected_min_dist(&p.distribution(), n, trials, seed)
}

/// Smallest `N` whose simulated expected minimum is below `loss_0` with a
/// three-standard-error margin.
pub fn empirical_crossover(p: &TheoryParams, trials: usize, seed: u64) -> Result<usize> {
    empirical_crossover_capped(p, trials, seed, 10_000)
}

pub fn empirical_crossover_capped(p: &TheoryParams, trials: usize, seed: u64, max_n: usize) -> Result<usize> {
    p.validate()?;
    let tree = SeedTree::new(seed);
    for n in 1..=max_n {
        let est = mc_expected_min(p, n, trials, tree.derive("budget", n as u64))?;
        if est.mean + 3.0 * est.std_err < p.loss_0 {
            return Ok(n);
        }
    }
    Err(TheoryError::NoCrossover(max_n))
}

/// Limits of the best-of-N minimum under standard and diversified sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportComparison {
    pub lim_std: f64,
    pub lim_div: f64,
    /// Whether diversification strictly lowers the attainable minimum.
    pub strict: bool,
}

/// As `N` grows the pool minimum converges to the infimum of the support, so
/// a diversified support that contains the standard one can only lower it.
pub fn support_expansion_demo(std_support: &DiscreteLoss, div_support: &DiscreteLoss) -> Result<SupportComparison> {
    std_support.validate()?;
    div_support.validate()?;
    let div = div_support.support();
    if let Some(missing) = std_support.support().into_iter().find(|v| !div.contains(v)) {
        return Err(TheoryError::Assumption(format!(
            "standard support point {missing} has no mass under diversified sampling"
        )));
    }
    let lim_std = std_support.infimum();
    let lim_div = div_support.infimum();
    Ok(SupportComparison {
        lim_std,
        lim_div,
        strict: lim_div < lim_std,
    })
}

/// One row of a theory sweep: closed form against simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub lgood: f64,
    pub lbad: f64,
    pub l0: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
}

pub fn sweep(params: &[TheoryParams], budgets: &[usize], trials: usize, seed: u64) -> Result<Vec<SweepRow>> {
    let tree = SeedTree::new(seed);
    let mut rows = Vec::with_capacity(params.len() * budgets.len());
    for (i, p) in params.iter().enumerate() {
        for &n in budgets {
            let est = mc_expected_min(p, n, trials, tree.child("params", i as u64).derive("budget", n as u64))?;
            rows.push(SweepRow {
                rho: p.rho,
                lgood: p.loss_good,
                lbad: p.loss_bad,
                l0: p.loss_0,
                n,
                analytic: expected_min_em(p, n)?,
                mc_mean: est.mean,
                mc_stderr: est.std_err,
            });
        }
    }
    Ok(rows)
}
