//! Candidate-pool construction and aggregation.
//!
//! Standard sampling draws `N` forecasts from the unperturbed context under a
//! fixed decoding configuration. Diversified sampling draws a fresh perturbed
//! context for every candidate and one forecast conditioned on it. Pools are
//! aggregated by best-of-N against the truth (EM) or by the elementwise median
//! (MV), evaluated on nested prefixes so that one pool serves every budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, BackendError, ForecastRequest, Forecaster};
use crate::error::CoreError;
use crate::loss::{mae_slice, mse_slice};
use crate::perturbation::{self, PerturbationError, PerturbationKind, PerturbationSpec};
use crate::seed::SeedTree;
use crate::types::{CandidatePool, Forecast, Provenance, TimeSeries};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),
    #[error("invalid budgets: {0}")]
    Budgets(String),
    #[error(transparent)]
    Shape(#[from] CoreError),
    #[error("candidate {index}: {source}")]
    Perturbation {
        index: usize,
        #[source]
        source: PerturbationError,
    },
    #[error("{}{source}", index.map(|i| format!("candidate {i}: ")).unwrap_or_default())]
    Backend {
        index: Option<usize>,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Standard,
    Diversified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 1.0,
        }
    }
}

/// Whether budgets share one pool (prefixes) or each get a fresh pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    #[default]
    Nested,
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub mode: SamplingMode,
    pub perturbation: Option<PerturbationSpec>,
    /// Pool size `N_max`.
    pub budget: usize,
    pub horizon: usize,
    pub decode: DecodeConfig,
    pub seed: SeedTree,
}

impl SamplingPlan {
    pub fn standard(budget: usize, horizon: usize, decode: DecodeConfig, seed: SeedTree) -> Self {
        Self {
            mode: SamplingMode::Standard,
            perturbation: None,
            budget,
            horizon,
            decode,
            seed,
        }
    }

    pub fn diversified(
        spec: PerturbationSpec,
        budget: usize,
        horizon: usize,
        decode: DecodeConfig,
        seed: SeedTree,
    ) -> Self {
        Self {
            mode: SamplingMode::Diversified,
            perturbation: Some(spec),
            budget,
            horizon,
            decode,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.budget == 0 {
            return Err(EngineError::InvalidPlan("budget must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(EngineError::InvalidPlan("horizon must be >= 1".into()));
        }
        match (self.mode, &self.perturbation) {
            (SamplingMode::Standard, Some(_)) => Err(EngineError::InvalidPlan(
                "standard sampling takes no perturbation".into(),
            )),
            (SamplingMode::Diversified, None) => Err(EngineError::InvalidPlan(
                "diversified sampling needs a perturbation".into(),
            )),
            (_, Some(spec)) => spec
                .validate()
                .map_err(|source| EngineError::Perturbation { index: 0, source }),
            _ => Ok(()),
        }
    }

    fn with_budget(&self, budget: usize, seed: SeedTree) -> Self {
        Self {
            budget,
            seed,
            ..self.clone()
        }
    }
}

fn backend_err(index: Option<usize>) -> impl Fn(BackendError) -> EngineError {
    move |source| EngineError::Backend { index, source }
}

/// Builds a pool of `plan.budget` candidates for `context`.
///
/// Diversified sampling with the identity perturbation places all mass on the
/// original context, so it takes the standard path and yields the same pool
/// bit for bit.
pub fn generate_pool(
    backend: &dyn Forecaster,
    plan: &SamplingPlan,
    context: &TimeSeries,
) -> Result<CandidatePool, EngineError> {
    plan.validate()?;
    let spec = match &plan.perturbation {
        Some(spec) if spec.kind != PerturbationKind::None => spec,
        _ => return standard_pool(backend, plan, context),
    };
    let results: Vec<Result<(Forecast, Provenance), EngineError>> = (0..plan.budget)
        .into_par_iter()
        .map(|i| {
            let node = plan.seed.child("candidate", i as u64);
            let perturb_seed = node.derive(&spec.seed_label, 0);
            let perturbed = perturbation::perturb(context, spec, perturb_seed, Some(backend))
                .map_err(|source| EngineError::Perturbation { index: i, source })?;
            let req = ForecastRequest::new(perturbed.series, plan.horizon, 1)
                .with_decode(plan.decode.temperature, plan.decode.top_p)
                .with_seed(node.derive("forecast", 0));
            let pool = backend::forecast(backend, &req).map_err(backend_err(Some(i)))?;
            let (mut candidates, _) = pool.into_parts();
            Ok((
                candidates.remove(0),
                Provenance {
                    candidate_seed: node.key(),
                    perturbation_id: spec.id().to_owned(),
                    perturbed_input_similarity: perturbed.source_similarity,
                },
            ))
        })
        .collect();
    let (candidates, provenance): (Vec<_>, Vec<_>) =
        results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
    Ok(CandidatePool::new(candidates, provenance)?)
}

fn standard_pool(
    backend: &dyn Forecaster,
    plan: &SamplingPlan,
    context: &TimeSeries,
) -> Result<CandidatePool, EngineError> {
    let req = ForecastRequest::new(context.clone(), plan.horizon, plan.budget)
        .with_decode(plan.decode.temperature, plan.decode.top_p)
        .with_seed(plan.seed.derive("standard", 0));
    backend::forecast(backend, &req).map_err(backend_err(None))
}

fn check_budgets(budgets: &[usize], n: usize) -> Result<(), EngineError> {
    if budgets.is_empty() {
        return Err(EngineError::Budgets("budget list is empty".into()));
    }
    if let Some(b) = budgets.iter().find(|&&b| b == 0 || b > n) {
        return Err(EngineError::Budgets(format!("budget {b} outside 1..={n}")));
    }
    Ok(())
}

fn check_truth(pool: &CandidatePool, truth: &Forecast) -> Result<(), EngineError> {
    if pool.shape() != truth.shape() {
        return Err(CoreError::Dimension {
            expected: format!("{:?}", truth.shape()),
            actual: format!("{:?}", pool.shape()),
        }
        .into());
    }
    Ok(())
}

/// MSE of every candidate against `truth`.
pub fn candidate_losses(pool: &CandidatePool, truth: &Forecast) -> Result<Vec<f64>, EngineError> {
    check_truth(pool, truth)?;
    Ok(pool
        .candidates()
        .iter()
        .map(|c| mse_slice(c.flat(), truth.flat()))
        .collect())
}

/// Best-of-`n` selection on a prefix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmPoint {
    pub budget: usize,
    pub loss: f64,
    pub index: usize,
}

/// Minimum-MSE candidate among the first `n` for each budget `n`.
/// Ties go to the lowest index.
pub fn exact_match(pool: &CandidatePool, truth: &Forecast, budgets: &[usize]) -> Result<Vec<EmPoint>, EngineError> {
    check_budgets(budgets, pool.len())?;
    let losses = candidate_losses(pool, truth)?;
    let max = *budgets.iter().max().expect("non-empty");
    let mut prefix = Vec::with_capacity(max);
    let mut best = (f64::INFINITY, 0usize);
    for (i, &l) in losses.iter().take(max).enumerate() {
        if l < best.0 {
            best = (l, i);
        }
        prefix.push(best);
    }
    Ok(budgets
        .iter()
        .map(|&n| EmPoint {
            budget: n,
            loss: prefix[n - 1].0,
            index: prefix[n - 1].1,
        })
        .collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Elementwise median of the first `n` candidates for each budget `n`.
/// Even `n` takes the midpoint of the two central order statistics.
pub fn majority_vote(pool: &CandidatePool, budgets: &[usize]) -> Result<Vec<Forecast>, EngineError> {
    check_budgets(budgets, pool.len())?;
    let (_, channels) = pool.shape();
    let width = pool.candidates()[0].flat().len();
    budgets
        .iter()
        .map(|&n| {
            let mut column = Vec::with_capacity(n);
            let values = (0..width)
                .map(|e| {
                    column.clear();
                    column.extend(pool.candidates()[..n].iter().map(|c| c.flat()[e]));
                    median(&mut column)
                })
                .collect();
            Ok(Forecast::from_flat(values, channels)?)
        })
        .collect()
}

/// Aggregates at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetResult {
    pub budget: usize,
    pub em_loss: f64,
    pub em_mae: f64,
    pub em_index: usize,
    pub mv_loss: f64,
    pub mv_mae: f64,
    pub mv_forecast: Forecast,
    /// Mean input similarity over the candidates considered at this budget.
    pub mean_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    /// Ascending, deduplicated.
    pub budgets: Vec<usize>,
    pub per_budget: Vec<BudgetResult>,
}

impl AggregateResult {
    pub fn at(&self, budget: usize) -> Option<&BudgetResult> {
        self.per_budget.iter().find(|r| r.budget == budget)
    }
}

/// Budgets `1, 2, 4, ..., 128`.
pub fn default_budgets() -> Vec<usize> {
    (0..=7).map(|k| 1usize << k).collect()
}

fn aggregate_prefixes(
    pool: &CandidatePool,
    truth: &Forecast,
    budgets: &[usize],
) -> Result<Vec<BudgetResult>, EngineError> {
    let em = exact_match(pool, truth, budgets)?;
    let mv = majority_vote(pool, budgets)?;
    Ok(em
        .into_iter()
        .zip(mv)
        .map(|(e, mv_forecast)| {
            let n = e.budget;
            let chosen = pool.candidates()[e.index].flat();
            BudgetResult {
                budget: n,
                em_loss: e.loss,
                em_mae: mae_slice(chosen, truth.flat()),
                em_index: e.index,
                mv_loss: mse_slice(mv_forecast.flat(), truth.flat()),
                mv_mae: mae_slice(mv_forecast.flat(), truth.flat()),
                mv_forecast,
                mean_similarity: pool.provenance()[..n]
                    .iter()
                    .map(|p| p.perturbed_input_similarity)
                    .sum::<f64>()
                    / n as f64,
            }
        })
        .collect())
}

/// Evaluates both aggregators at every budget for one `(context, truth)` window.
///
/// In nested mode a single pool of `max(budgets)` candidates is drawn and each
/// budget reads a prefix of it, so EM is non-increasing in the budget. In
/// independent mode every budget draws its own pool.
pub fn evaluate_window(
    backend: &dyn Forecaster,
    plan: &SamplingPlan,
    context: &TimeSeries,
    truth: &Forecast,
    budgets: &[usize],
    mode: PoolMode,
) -> Result<AggregateResult, EngineError> {
    let mut budgets = budgets.to_vec();
    budgets.sort_unstable();
    budgets.dedup();
    check_budgets(&budgets, plan.budget)?;
    if truth.horizon() != plan.horizon {
        return Err(EngineError::InvalidPlan(format!(
            "truth horizon {} differs from plan horizon {}",
            truth.horizon(),
            plan.horizon
        )));
    }
    let max = *budgets.last().expect("non-empty");
    let per_budget = match mode {
        PoolMode::Nested => {
            let pool = generate_pool(backend, &plan.with_budget(max, plan.seed.clone()), context)?;
            aggregate_prefixes(&pool, truth, &budgets)?
        }
        PoolMode::Independent => budgets
            .iter()
            .map(|&n| {
                let sub = plan.with_budget(n, plan.seed.child("budget", n as u64));
                let pool = generate_pool(backend, &sub, context)?;
                Ok(aggregate_prefixes(&pool, truth, &[n])?.remove(0))
            })
            .collect::<Result<Vec<_>, EngineError>>()?,
    };
    Ok(AggregateResult { budgets, per_budget })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{SeasonalAr, SeasonalArConfig, TwoPoint, TwoPointConfig};
    use crate::perturbation::ParamDist;

    fn f(v: &[f64]) -> Forecast {
        Forecast::univariate(v.to_vec()).unwrap()
    }

    fn pool(cands: &[&[f64]]) -> CandidatePool {
        CandidatePool::from_candidates(cands.iter().map(|c| f(c)).collect()).unwrap()
    }

    fn context(len: usize) -> TimeSeries {
        TimeSeries::univariate(
            (0..len)
                .map(|t| 10.0 + (t as f64 * std::f64::consts::TAU / 24.0).sin() * 3.0 + (t % 7) as f64 * 0.1)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn em_example() {
        // Losses against [0]: 0.3, 0.1, 0.2.
        let p = pool(&[&[0.3f64.sqrt()], &[0.1f64.sqrt()], &[0.2f64.sqrt()]]);
        let em = exact_match(&p, &f(&[0.0]), &[1, 2, 3]).unwrap();
        let losses: Vec<f64> = em.iter().map(|e| e.loss).collect();
        assert!((losses[0] - 0.3).abs() < 1e-12);
        assert!((losses[1] - 0.1).abs() < 1e-12);
        assert!((losses[2] - 0.1).abs() < 1e-12);
        assert_eq!(em[2].index, 1);
    }

    #[test]
    fn em_ties_pick_lowest_index() {
        let p = pool(&[&[1.0], &[1.0], &[1.0]]);
        let em = exact_match(&p, &f(&[0.0]), &[1, 2, 3]).unwrap();
        assert!(em.iter().all(|e| e.index == 0 && e.loss == 1.0));
    }

    #[test]
    fn mv_examples() {
        let p = pool(&[&[1.0, 3.0], &[2.0, 5.0], &[9.0, 4.0]]);
        assert_eq!(majority_vote(&p, &[3]).unwrap()[0], f(&[2.0, 4.0]));
        assert_eq!(majority_vote(&p, &[1]).unwrap()[0], f(&[1.0, 3.0]));
        let even = pool(&[&[0.0], &[2.0]]);
        assert_eq!(majority_vote(&even, &[2]).unwrap()[0], f(&[1.0]));
    }

    #[test]
    fn budget_errors() {
        let p = pool(&[&[1.0], &[2.0]]);
        assert!(matches!(exact_match(&p, &f(&[0.0]), &[]), Err(EngineError::Budgets(_))));
        assert!(matches!(
            exact_match(&p, &f(&[0.0]), &[3]),
            Err(EngineError::Budgets(_))
        ));
        assert!(matches!(majority_vote(&p, &[0]), Err(EngineError::Budgets(_))));
        assert!(matches!(
            exact_match(&p, &f(&[0.0, 1.0]), &[1]),
            Err(EngineError::Shape(_))
        ));
    }

    #[test]
    fn plan_validation() {
        let d = DecodeConfig::default();
        let mut plan = SamplingPlan::standard(4, 8, d, SeedTree::new(0));
        plan.perturbation = Some(PerturbationSpec::none());
        assert!(plan.validate().is_err());
        plan.mode = SamplingMode::Diversified;
        plan.perturbation = None;
        assert!(plan.validate().is_err());
        assert!(SamplingPlan::standard(0, 8, d, SeedTree::new(0)).validate().is_err());
    }

    #[test]
    fn diversified_none_matches_standard_bitwise() {
        let ar = SeasonalAr::new(SeasonalArConfig::default()).unwrap();
        let ctx = context(96);
        let d = DecodeConfig::default();
        let std = generate_pool(&ar, &SamplingPlan::standard(16, 12, d, SeedTree::new(3)), &ctx).unwrap();
        let div = generate_pool(
            &ar,
            &SamplingPlan::diversified(PerturbationSpec::none(), 16, 12, d, SeedTree::new(3)),
            &ctx,
        )
        .unwrap();
        assert_eq!(std, div);
        let one = generate_pool(&ar, &SamplingPlan::standard(1, 12, d, SeedTree::new(3)), &ctx).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn diversified_pool_records_provenance() {
        let ar = SeasonalAr::new(SeasonalArConfig::default()).unwrap();
        let ctx = context(96);
        let spec = PerturbationSpec::new(PerturbationKind::Gaussian).with_eta(ParamDist::Fixed(0.1));
        let plan = SamplingPlan::diversified(spec, 8, 12, DecodeConfig::default(), SeedTree::new(4));
        let pool = generate_pool(&ar, &plan, &ctx).unwrap();
        assert_eq!(pool.len(), 8);
        assert!(pool
            .provenance()
            .iter()
            .all(|p| p.perturbation_id == "gaussian" && p.perturbed_input_similarity < 1.0));
        assert_eq!(pool, generate_pool(&ar, &plan, &ctx).unwrap());
    }

    #[test]
    fn two_point_diversified_losses_two_valued() {
        let tp = TwoPoint::new(TwoPointConfig::from_losses(0.4, 0.25, 4.0)).unwrap();
        let ctx = context(64);
        let spec = PerturbationSpec::new(PerturbationKind::Gaussian);
        let plan = SamplingPlan::diversified(spec, 64, 6, DecodeConfig::default(), SeedTree::new(5));
        let pool = generate_pool(&tp, &plan, &ctx).unwrap();
        let losses = candidate_losses(&pool, &f(&[0.0; 6])).unwrap();
        assert!(losses.iter().all(|&l| l == 0.25 || l == 4.0));
    }

    #[test]
    fn evaluate_single_budget_coincides() {
        let ar = SeasonalAr::new(SeasonalArConfig::default()).unwrap();
        let ctx = context(96);
        let truth = f(&[10.0; 12]);
        let plan = SamplingPlan::standard(1, 12, DecodeConfig::default(), SeedTree::new(6));
        let res = evaluate_window(&ar, &plan, &ctx, &truth, &[1], PoolMode::Nested).unwrap();
        let r = &res.per_budget[0];
        assert_eq!(r.em_loss, r.mv_loss);
        let pool = generate_pool(&ar, &plan, &ctx).unwrap();
        assert_eq!(r.em_loss, crate::loss::mse(&pool.candidates()[0], &truth).unwrap());
    }

    #[test]
    fn evaluate_nested_monotone_and_independent_runs() {
        let ar = SeasonalAr::new(SeasonalArConfig::default()).unwrap();
        let ctx = context(120);
        let truth = f(&[10.0; 12]);
        let budgets = default_budgets();
        let plan = SamplingPlan::standard(128, 12, DecodeConfig::default(), SeedTree::new(7));
        let res = evaluate_window(&ar, &plan, &ctx, &truth, &budgets, PoolMode::Nested).unwrap();
        assert_eq!(res.budgets, budgets);
        for w in res.per_budget.windows(2) {
            assert!(w[1].em_loss <= w[0].em_loss);
        }
        let ind = evaluate_window(&ar, &plan, &ctx, &truth, &[1, 4], PoolMode::Independent).unwrap();
        assert_eq!(ind.per_budget.len(), 2);
        assert!(evaluate_window(&ar, &plan, &ctx, &f(&[1.0; 3]), &[1], PoolMode::Nested).is_err());
    }
}
