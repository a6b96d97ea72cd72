//! Dataset-level metrics: RobustMSE, the failure rule, convergence stars and
//! fidelity curves.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Forecaster;
use crate::engine::{self, DecodeConfig, EngineError, PoolMode, SamplingPlan};
use crate::perturbation::{PerturbationKind, PerturbationSpec, StrategyClass};
use crate::seed::SeedTree;
use crate::types::{Forecast, TimeSeries};

/// A perturbed configuration fails when its loss exceeds the baseline by more
/// than this factor.
pub const FAILURE_RATIO: f64 = 1.2;

pub const DEFAULT_REL_TOL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("trial {trial} failed after {} completed trials: {source}", completed.len())]
    Trial {
        trial: usize,
        /// `(em, mv)` combined values of the trials that finished.
        completed: Vec<(f64, f64)>,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// One evaluation window: context and ground-truth continuation.
pub type Window = (TimeSeries, Forecast);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigCombine {
    #[default]
    MinAcrossConfigs,
    MeanAcrossConfigs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerAggregator {
    pub em: MeanStd,
    pub mv: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustMseReport {
    pub strategy_class: StrategyClass,
    pub per_aggregator: PerAggregator,
    pub trials: usize,
    pub budget: usize,
    pub config_combine: ConfigCombine,
    /// Combined EM value of each trial.
    pub em_trials: Vec<f64>,
    /// Combined MV value of each trial.
    pub mv_trials: Vec<f64>,
}

pub const ROBUST_CSV_HEADER: &str = "strategy_class,aggregator,mean,std,N,T";

impl RobustMseReport {
    /// Two rows, EM then MV, without a header.
    pub fn csv_rows(&self) -> String {
        self.csv_rows_as(match self.strategy_class {
            StrategyClass::TaskAgnostic => "task_agnostic",
            StrategyClass::TaskSpecific => "task_specific",
        })
    }

    /// Like [`csv_rows`](Self::csv_rows) with a custom first column.
    pub fn csv_rows_as(&self, class: &str) -> String {
        let mut out = String::new();
        for (agg, s) in [("em", self.per_aggregator.em), ("mv", self.per_aggregator.mv)] {
            let _ = writeln!(
                out,
                "{class},{agg},{},{},{},{}",
                s.mean, s.std, self.budget, self.trials
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustMseOptions {
    pub budget: usize,
    pub trials: usize,
    pub combine: ConfigCombine,
    pub horizon: usize,
    pub decode: DecodeConfig,
    pub strategy_class: StrategyClass,
}

impl RobustMseOptions {
    pub fn new(horizon: usize, strategy_class: StrategyClass) -> Self {
        Self {
            budget: 64,
            trials: 5,
            combine: ConfigCombine::default(),
            horizon,
            decode: DecodeConfig::default(),
            strategy_class,
        }
    }
}

/// Dataset-mean EM and MV losses of one configuration at `budget`.
pub fn dataset_losses(
    backend: &dyn Forecaster,
    windows: &[Window],
    spec: &PerturbationSpec,
    budget: usize,
    horizon: usize,
    decode: DecodeConfig,
    seed: &SeedTree,
) -> Result<(f64, f64), EngineError> {
    let per_window: Vec<(f64, f64)> = windows
        .par_iter()
        .enumerate()
        .map(|(w, (context, truth))| {
            let tree = seed.child("window", w as u64);
            let plan = plan_for(spec, budget, horizon, decode, tree);
            let res = engine::evaluate_window(backend, &plan, context, truth, &[budget], PoolMode::Nested)?;
            let r = &res.per_budget[0];
            Ok((r.em_loss, r.mv_loss))
        })
        .collect::<Result<_, EngineError>>()?;
    let n = per_window.len() as f64;
    let em = per_window.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = per_window.iter().map(|p| p.1).sum::<f64>() / n;
    Ok((em, mv))
}

fn plan_for(
    spec: &PerturbationSpec,
    budget: usize,
    horizon: usize,
    decode: DecodeConfig,
    seed: SeedTree,
) -> SamplingPlan {
    if spec.kind == PerturbationKind::None {
        SamplingPlan::standard(budget, horizon, decode, seed)
    } else {
        SamplingPlan::diversified(spec.clone(), budget, horizon, decode, seed)
    }
}

fn combine(values: &[f64], how: ConfigCombine) -> f64 {
    match how {
        ConfigCombine::MinAcrossConfigs => values.iter().copied().fold(f64::INFINITY, f64::min),
        ConfigCombine::MeanAcrossConfigs => values.iter().sum::<f64>() / values.len() as f64,
    }
}

/// Averages, over `trials` independent trials, the best (or mean) dataset
/// loss achieved across the valid configurations at a fixed budget.
pub fn robust_mse(
    backend: &dyn Forecaster,
    windows: &[Window],
    valid: &[PerturbationSpec],
    opts: &RobustMseOptions,
    seed: &SeedTree,
) -> Result<RobustMseReport, MetricsError> {
    if valid.is_empty() {
        return Err(MetricsError::InvalidInput("no valid perturbations".into()));
    }
    if windows.is_empty() {
        return Err(MetricsError::InvalidInput("no evaluation windows".into()));
    }
    if opts.budget == 0 || opts.trials == 0 {
        return Err(MetricsError::InvalidInput("budget and trials must be >= 1".into()));
    }
    let mut completed = Vec::with_capacity(opts.trials);
    for t in 0..opts.trials {
        let trial_tree = seed.child("trial", t as u64);
        let per_config: Result<Vec<(f64, f64)>, EngineError> = valid
            .iter()
            .enumerate()
            .map(|(c, spec)| {
                let tree = trial_tree.child("config", c as u64);
                dataset_losses(backend, windows, spec, opts.budget, opts.horizon, opts.decode, &tree)
            })
            .collect();
        match per_config {
            Ok(v) => {
                let em: Vec<f64> = v.iter().map(|p| p.0).collect();
                let mv: Vec<f64> = v.iter().map(|p| p.1).collect();
                completed.push((combine(&em, opts.combine), combine(&mv, opts.combine)));
            }
            Err(source) => {
                return Err(MetricsError::Trial {
                    trial: t,
                    completed,
                    source,
                })
            }
        }
    }
    let em_trials: Vec<f64> = completed.iter().map(|p| p.0).collect();
    let mv_trials: Vec<f64> = completed.iter().map(|p| p.1).collect();
    Ok(RobustMseReport {
        strategy_class: opts.strategy_class,
        per_aggregator: PerAggregator {
            em: MeanStd::of(&em_trials),
            mv: MeanStd::of(&mv_trials),
        },
        trials: opts.trials,
        budget: opts.budget,
        config_combine: opts.combine,
        em_trials,
        mv_trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureVerdict {
    pub perturbation_id: String,
    pub baseline_mse: f64,
    pub perturbed_mse: f64,
    pub failed: bool,
}

/// Applies the failure rule `perturbed > 1.2 * baseline` to each configuration.
pub fn detect_failures(results: &[(String, f64)], baseline: f64) -> Result<Vec<FailureVerdict>, MetricsError> {
    if !(baseline > 0.0 && baseline.is_finite()) {
        return Err(MetricsError::InvalidInput(format!(
            "baseline {baseline} must be positive"
        )));
    }
    Ok(results
        .iter()
        .map(|(id, mse)| FailureVerdict {
            perturbation_id: id.clone(),
            baseline_mse: baseline,
            perturbed_mse: *mse,
            failed: *mse > FAILURE_RATIO * baseline,
        })
        .collect())
}

pub fn failure_count(verdicts: &[FailureVerdict]) -> usize {
    verdicts.iter().filter(|v| v.failed).count()
}

/// Smallest budget whose loss is within `rel_tol` of the minimum over all
/// budgets. Input must be sorted by ascending budget.
pub fn convergence_point(losses: &[(usize, f64)], rel_tol: f64) -> Result<usize, MetricsError> {
    if losses.is_empty() {
        return Err(MetricsError::InvalidInput("no budgets".into()));
    }
    if losses.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(MetricsError::InvalidInput("budgets must be strictly ascending".into()));
    }
    if losses.iter().any(|(_, l)| l.is_nan()) || rel_tol.is_nan() || rel_tol < 0.0 {
        return Err(MetricsError::InvalidInput("losses and rel_tol must be numbers".into()));
    }
    let min = losses.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let bound = (1.0 + rel_tol) * min;
    Ok(losses
        .iter()
        .find(|(_, l)| *l <= bound)
        .expect("minimum attains the bound")
        .0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub intensity: f64,
    pub mean_similarity: f64,
    pub mean_mse: f64,
}

/// For each intensity, the mean input similarity across all sampled contexts
/// and the dataset-mean MV loss of diversified sampling at `budget`.
/// Rows are sorted by descending similarity.
#[allow(clippy::too_many_arguments)]
pub fn fidelity_curve(
    backend: &dyn Forecaster,
    windows: &[Window],
    family: &PerturbationSpec,
    intensities: &[f64],
    budget: usize,
    horizon: usize,
    decode: DecodeConfig,
    seed: &SeedTree,
) -> Result<Vec<FidelityRow>, MetricsError> {
    if intensities.is_empty() {
        return Err(MetricsError::InvalidInput("intensity grid is empty".into()));
    }
    if windows.is_empty() {
        return Err(MetricsError::InvalidInput("no evaluation windows".into()));
    }
    let mut rows = intensities
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let spec = family.with_intensity(x);
            let tree = seed.child("intensity", k as u64);
            let per_window: Vec<(f64, f64)> = windows
                .par_iter()
                .enumerate()
                .map(|(w, (context, truth))| {
                    let plan = plan_for(&spec, budget, horizon, decode, tree.child("window", w as u64));
                    let res = engine::evaluate_window(backend, &plan, context, truth, &[budget], PoolMode::Nested)?;
                    let r = &res.per_budget[0];
                    Ok((r.mean_similarity, r.mv_loss))
                })
                .collect::<Result<_, EngineError>>()?;
            let n = per_window.len() as f64;
            Ok(FidelityRow {
                intensity: x,
                mean_similarity: per_window.iter().map(|p| p.0).sum::<f64>() / n,
                mean_mse: per_window.iter().map(|p| p.1).sum::<f64>() / n,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    rows.sort_by(|a, b| b.mean_similarity.total_cmp(&a.mean_similarity));
    Ok(rows)
}
