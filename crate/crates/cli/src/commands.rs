//! Subcommand implementations.

use std::path::{Path, PathBuf};

use divscale_core::backend::{self, conformance, Forecaster, SyntheticBackendConfig};
use divscale_core::decomposition::DecompositionError;
use divscale_core::engine::{self, DecodeConfig, EngineError, SamplingPlan};
use divscale_core::metrics::{self, FailureVerdict, RobustMseOptions, RobustMseReport, Window, ROBUST_CSV_HEADER};
use divscale_core::perturbation::{PerturbationError, PerturbationKind, PerturbationSpec, StrategyClass};
use divscale_core::theory::{self, DiscreteLoss};
use divscale_core::{Forecast, SeedTree, TimeSeries};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BackendChoice, BaselineMode, RunConfig, SweepAxis};
use crate::dataset::{load_dataset, sliding_windows, synthetic_series};
use crate::error::CliError;
use crate::output::{self, ConfigSummary, EvalRecord};

pub fn build_backend(cfg: &RunConfig) -> Result<Box<dyn Forecaster>, CliError> {
    Ok(match cfg.backend_choice()? {
        BackendChoice::SeasonalAr => backend::builtin(&SyntheticBackendConfig::SeasonalAr(cfg.seasonal_ar.clone()))?,
        BackendChoice::TwoPoint => backend::builtin(&SyntheticBackendConfig::TwoPoint(cfg.two_point.clone()))?,
        BackendChoice::External(cmd) => {
            let procs = cfg.backend_procs.min(cfg.jobs.unwrap_or(usize::MAX)).max(1);
            let b = backend::spawn_external_pool(&cmd, procs, cfg.handshake_timeout())?;
            info!(
                "external backend {} ({} process(es))",
                b.descriptor().name,
                b.process_count()
            );
            Box::new(b)
        }
    })
}

/// The evaluation series: the configured dataset split or the built-in
/// synthetic series.
pub fn load_series(cfg: &RunConfig) -> Result<TimeSeries, CliError> {
    match &cfg.dataset {
        Some(path) => load_dataset(path, &cfg.target, &cfg.split),
        None => Ok(synthetic_series(cfg.synthetic_length, cfg.master_seed)),
    }
}

pub fn windows(cfg: &RunConfig, series: &TimeSeries, context_length: usize) -> Result<Vec<Window>, CliError> {
    let mut w = sliding_windows(series, context_length, cfg.horizon, cfg.stride)?;
    if let Some(max) = cfg.max_windows {
        w.truncate(max.max(1));
    }
    Ok(w)
}

/// One point of a sweep: a sampling strategy at a context length and
/// temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub spec: PerturbationSpec,
    pub context_length: usize,
    pub decode: DecodeConfig,
}

impl SweepPoint {
    fn plan(&self, budget: usize, horizon: usize, seed: SeedTree) -> SamplingPlan {
        if self.spec.kind == PerturbationKind::None {
            SamplingPlan::standard(budget, horizon, self.decode, seed)
        } else {
            SamplingPlan::diversified(self.spec.clone(), budget, horizon, self.decode, seed)
        }
    }
}

fn normalize_window(context: &TimeSeries, truth: &Forecast) -> (TimeSeries, Forecast, f64) {
    let v = context.flat();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 { std } else { 1.0 };
    let z = |x: &f64| (x - mean) / scale;
    let ctx = TimeSeries::from_flat(v.iter().map(z).collect(), context.channels())
        .expect("finite context")
        .with_name(context.name.clone())
        .with_freq_hint(context.freq_hint.clone());
    let tr = Forecast::from_flat(truth.flat().iter().map(z).collect(), truth.channels()).expect("finite truth");
    (ctx, tr, scale)
}

/// Evaluates every point on every window and trial. Rows come back ordered
/// by point, trial, window, budget and aggregator regardless of scheduling.
/// The second vector maps each row to its point index.
pub fn evaluate_points(
    cfg: &RunConfig,
    backend: &dyn Forecaster,
    windows: &[Window],
    points: &[SweepPoint],
    dataset: &str,
    tree: &SeedTree,
) -> Result<(Vec<EvalRecord>, Vec<usize>), CliError> {
    let model = backend.descriptor().name.clone();
    let budgets = &cfg.budgets;
    let max_budget = *budgets.last().expect("validated budgets");
    let tasks: Vec<(usize, usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).flat_map(move |t| (0..windows.len()).map(move |w| (p, t, w))))
        .collect();
    let results: Vec<Result<Vec<EvalRecord>, CliError>> = tasks
        .par_iter()
        .map(|&(p, t, w)| {
            let point = &points[p];
            let seed = tree
                .child("config", p as u64)
                .child("trial", t as u64)
                .child("window", w as u64);
            let (context, truth) = &windows[w];
            let context = context.tail(point.context_length);
            let (context, truth, scale) = if cfg.normalize {
                normalize_window(&context, truth)
            } else {
                (context, truth.clone(), 1.0)
            };
            let row = |budget: usize, aggregator: &str, mse: f64, mae: f64, sim: f64, error: String| EvalRecord {
                model: model.clone(),
                dataset: dataset.to_owned(),
                perturbation_id: point.spec.label(),
                context_length: point.context_length,
                temperature: point.decode.temperature,
                budget,
                aggregator: aggregator.to_owned(),
                trial: t,
                window_index: w,
                loss_mse: mse,
                loss_mae: mae,
                mean_similarity: sim,
                error,
            };
            let plan = point.plan(max_budget, cfg.horizon, seed);
            match engine::evaluate_window(backend, &plan, &context, &truth, budgets, cfg.pool_mode) {
                Ok(res) => Ok(res
                    .per_budget
                    .iter()
                    .flat_map(|b| {
                        [
                            row(
                                b.budget,
                                "em",
                                b.em_loss * scale * scale,
                                b.em_mae * scale,
                                b.mean_similarity,
                                String::new(),
                            ),
                            row(
                                b.budget,
                                "mv",
                                b.mv_loss * scale * scale,
                                b.mv_mae * scale,
                                b.mean_similarity,
                                String::new(),
                            ),
                        ]
                    })
                    .collect()),
                Err(e) if cfg.skip_errors || period_too_long(&e) => {
                    warn!("skipping {} trial {t} window {w}: {e}", point.spec.label());
                    Ok(vec![row(0, "error", f64::NAN, f64::NAN, f64::NAN, e.to_string())])
                }
                Err(source) => Err(CliError::Engine {
                    context: format!(
                        "config {} (L={}, temperature={}), trial {t}, window {w}",
                        point.spec.label(),
                        point.context_length,
                        point.decode.temperature
                    ),
                    source,
                }),
            }
        })
        .collect();
    let mut records = Vec::new();
    let mut config_of = Vec::new();
    for (task, result) in tasks.iter().zip(results) {
        let rows = result?;
        config_of.extend(std::iter::repeat_n(task.0, rows.len()));
        records.extend(rows);
    }
    Ok((records, config_of))
}

/// A seasonal period longer than half the context cannot be decomposed; the
/// window is recorded as skipped rather than aborting the sweep.
fn period_too_long(e: &EngineError) -> bool {
    matches!(
        e,
        EngineError::Perturbation {
            source: PerturbationError::Decomposition(DecompositionError::InsufficientLength { .. }),
            ..
        }
    )
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    command: &'a str,
    model: String,
    dataset: String,
    windows: usize,
    trials: usize,
    budgets: &'a [usize],
    master_seed: u64,
    configs: &'a [ConfigSummary],
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(CliError::io(&cfg.out))?;
    Ok(cfg.out.clone())
}

fn write_sweep(
    cfg: &RunConfig,
    command: &str,
    backend: &dyn Forecaster,
    dataset: &str,
    windows: usize,
    records: &[EvalRecord],
    config_of: &[usize],
) -> Result<Vec<ConfigSummary>, CliError> {
    let out = prepare_out(cfg)?;
    output::write_records(&out.join("records.csv"), records)?;
    let summaries = output::summarize(records, config_of);
    output::write_json(
        &out.join("summary.json"),
        &SweepSummary {
            command,
            model: backend.descriptor().name.clone(),
            dataset: dataset.to_owned(),
            windows,
            trials: cfg.trials,
            budgets: &cfg.budgets,
            master_seed: cfg.master_seed,
            configs: &summaries,
        },
    )?;
    output::write_plotdata(&out.join("plotdata"), &summaries)?;
    Ok(summaries)
}

fn supported(backend: &dyn Forecaster, specs: Vec<PerturbationSpec>) -> Vec<PerturbationSpec> {
    specs
        .into_iter()
        .filter(|s| {
            let ok = s.kind != PerturbationKind::Reconstruction || backend.descriptor().supports_reconstruction;
            if !ok {
                warn!(
                    "{} skipped: backend {} cannot reconstruct",
                    s.label(),
                    backend.descriptor().name
                );
            }
            ok
        })
        .collect()
}

/// Budgets against one sweep axis: temperature, context length, or a single
/// point per configured strategy.
pub fn scale_sweep(cfg: &RunConfig) -> Result<Vec<ConfigSummary>, CliError> {
    let backend = build_backend(cfg)?;
    let series = load_series(cfg)?;
    let specs = if cfg.perturbations.is_empty() {
        vec![PerturbationSpec::none()]
    } else {
        cfg.perturbations.clone()
    };
    let specs = supported(backend.as_ref(), specs);
    let (lengths, temps) = match cfg.sweep {
        SweepAxis::None => (vec![cfg.context_length], vec![cfg.temperature]),
        SweepAxis::Temperature => (vec![cfg.context_length], cfg.temperature_grid.clone()),
        SweepAxis::ContextLength => (cfg.context_grid.clone(), vec![cfg.temperature]),
    };
    let mut points = Vec::new();
    for spec in &specs {
        for &l in &lengths {
            for &t in &temps {
                points.push(SweepPoint {
                    spec: spec.clone(),
                    context_length: l,
                    decode: DecodeConfig {
                        temperature: t,
                        top_p: cfg.top_p,
                    },
                });
            }
        }
    }
    // Every point is scored on the same forecast targets; shorter contexts
    // keep the most recent part of the longest window.
    let max_l = *lengths.iter().max().expect("non-empty grid");
    let windows = windows(cfg, &series, max_l)?;
    info!(
        "scale-sweep: {} config(s) x {} window(s) x {} trial(s)",
        points.len(),
        windows.len(),
        cfg.trials
    );
    let tree = SeedTree::new(cfg.master_seed).child("scale-sweep", 0);
    let (records, config_of) = evaluate_points(cfg, backend.as_ref(), &windows, &points, &series.name, &tree)?;
    write_sweep(
        cfg,
        "scale-sweep",
        backend.as_ref(),
        &series.name,
        windows.len(),
        &records,
        &config_of,
    )
}

#[derive(Debug, Serialize)]
pub struct PerturbSweepOutcome {
    pub verdicts: Vec<FailureVerdict>,
    pub valid: Vec<PerturbationSpec>,
    pub summaries: Vec<ConfigSummary>,
}

/// Every configured strategy plus the standard-sampling baseline; applies
/// the failure rule and the optional fidelity gate and lists the valid set.
pub fn perturb_sweep(cfg: &RunConfig) -> Result<PerturbSweepOutcome, CliError> {
    let backend = build_backend(cfg)?;
    let series = load_series(cfg)?;
    let specs = if cfg.perturbations.is_empty() {
        RunConfig::default_perturbations()
    } else {
        cfg.perturbations.clone()
    };
    let mut all = vec![PerturbationSpec::none()];
    all.extend(
        supported(backend.as_ref(), specs)
            .into_iter()
            .filter(|s| s.kind != PerturbationKind::None),
    );
    let points: Vec<SweepPoint> = all
        .iter()
        .map(|spec| SweepPoint {
            spec: spec.clone(),
            context_length: cfg.context_length,
            decode: cfg.decode(),
        })
        .collect();
    let windows = windows(cfg, &series, cfg.context_length)?;
    let tree = SeedTree::new(cfg.master_seed).child("perturb-sweep", 0);
    let (records, config_of) = evaluate_points(cfg, backend.as_ref(), &windows, &points, &series.name, &tree)?;
    let summaries = write_sweep(
        cfg,
        "perturb-sweep",
        backend.as_ref(),
        &series.name,
        windows.len(),
        &records,
        &config_of,
    )?;

    let max_budget = *cfg.budgets.last().expect("validated budgets");
    let baseline_budget = match cfg.baseline_mode {
        BaselineMode::Standard => max_budget,
        BaselineMode::Single => 1,
    };
    let mut verdicts = Vec::new();
    let mut valid = Vec::new();
    for agg in ["em", "mv"] {
        let baseline = summaries[0]
            .at(agg, baseline_budget)
            .ok_or_else(|| CliError::Config(format!("baseline budget {baseline_budget} is not among the budgets")))?
            .mse_mean;
        let results: Vec<(String, f64)> = summaries[1..]
            .iter()
            .map(|s| {
                (
                    s.perturbation_id.clone(),
                    s.at(agg, max_budget).map_or(f64::INFINITY, |b| b.mse_mean),
                )
            })
            .collect();
        verdicts.push((agg, metrics::detect_failures(&results, baseline)?));
    }
    for (k, spec) in all[1..].iter().enumerate() {
        let failed = verdicts.iter().any(|(_, v)| v[k].failed);
        let faithful = cfg
            .fidelity_threshold
            .is_none_or(|t| summaries[k + 1].mean_similarity >= t);
        if !failed && faithful {
            valid.push(spec.clone());
        }
    }
    let out = prepare_out(cfg)?;
    let path = out.join("failures.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path)(e.into()))?;
    w.write_record([
        "perturbation_id",
        "aggregator",
        "baseline_mse",
        "perturbed_mse",
        "failed",
        "mean_similarity",
    ])
    .map_err(|e| CliError::io(&path)(e.into()))?;
    for (agg, vs) in &verdicts {
        for (k, v) in vs.iter().enumerate() {
            w.write_record([
                v.perturbation_id.clone(),
                agg.to_string(),
                v.baseline_mse.to_string(),
                v.perturbed_mse.to_string(),
                v.failed.to_string(),
                summaries[k + 1].mean_similarity.to_string(),
            ])
            .map_err(|e| CliError::io(&path)(e.into()))?;
        }
    }
    w.flush().map_err(CliError::io(&path))?;
    output::write_json(&out.join("valid_set.json"), &valid)?;
    let em = verdicts
        .into_iter()
        .find(|(a, _)| *a == "em")
        .map(|(_, v)| v)
        .unwrap_or_default();
    info!(
        "perturb-sweep: {} of {} configuration(s) failed under EM",
        metrics::failure_count(&em),
        em.len()
    );
    Ok(PerturbSweepOutcome {
        verdicts: em,
        valid,
        summaries,
    })
}

#[derive(Debug, Serialize)]
pub struct RobustOutcome {
    pub baseline: RobustMseReport,
    pub reports: Vec<RobustMseReport>,
}

/// RobustMSE for each strategy class over the valid set, plus a standard
/// sampling reference row.
pub fn robustmse(cfg: &RunConfig) -> Result<RobustOutcome, CliError> {
    let backend = build_backend(cfg)?;
    let series = load_series(cfg)?;
    let specs = match &cfg.valid_set {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            serde_json::from_str::<Vec<PerturbationSpec>>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None if cfg.perturbations.is_empty() => RunConfig::default_perturbations(),
        None => cfg.perturbations.clone(),
    };
    let specs = supported(backend.as_ref(), specs);
    let windows = windows(cfg, &series, cfg.context_length)?;
    let tree = SeedTree::new(cfg.master_seed).child("robustmse", 0);
    let options = |class| RobustMseOptions {
        budget: cfg.robust_budget,
        trials: cfg.robust_trials,
        combine: cfg.combine,
        horizon: cfg.horizon,
        decode: cfg.decode(),
        strategy_class: class,
    };
    let mut reports = Vec::new();
    for (k, class) in [StrategyClass::TaskAgnostic, StrategyClass::TaskSpecific]
        .into_iter()
        .enumerate()
    {
        let members: Vec<PerturbationSpec> = specs
            .iter()
            .filter(|s| s.kind.class() == class && s.kind != PerturbationKind::None)
            .cloned()
            .collect();
        if members.is_empty() {
            warn!("no valid {class:?} perturbations; class skipped");
            continue;
        }
        reports.push(metrics::robust_mse(
            backend.as_ref(),
            &windows,
            &members,
            &options(class),
            &tree.child("class", k as u64),
        )?);
    }
    let mut base = options(StrategyClass::TaskAgnostic);
    if cfg.baseline_mode == BaselineMode::Single {
        base.budget = 1;
    }
    let baseline = metrics::robust_mse(
        backend.as_ref(),
        &windows,
        &[PerturbationSpec::none()],
        &base,
        &tree.child("baseline", 0),
    )?;

    let out = prepare_out(cfg)?;
    let mut csv = format!("{ROBUST_CSV_HEADER}\n");
    csv.push_str(&baseline.csv_rows_as("standard"));
    for r in &reports {
        csv.push_str(&r.csv_rows());
    }
    let path = out.join("robustmse.csv");
    std::fs::write(&path, csv).map_err(CliError::io(&path))?;
    let outcome = RobustOutcome { baseline, reports };
    output::write_json(&out.join("robustmse.json"), &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
pub struct TheoryOutcome {
    pub params: theory::TheoryParams,
    pub critical_threshold: f64,
    pub predicted_crossover: usize,
    pub empirical_crossover: usize,
    pub trials: usize,
    pub support_demo: theory::SupportComparison,
}

/// Analytic-versus-simulated expected minimum and the crossover budget.
pub fn theory_cmd(cfg: &RunConfig) -> Result<TheoryOutcome, CliError> {
    let p = cfg.theory_params();
    let n_star = theory::critical_threshold(&p)?;
    let rows = theory::sweep(&[p], &cfg.theory_budgets, cfg.theory_trials, cfg.master_seed)?;
    let crossover = theory::empirical_crossover(&p, cfg.theory_trials, cfg.master_seed)?;
    let demo = theory::support_expansion_demo(
        &DiscreteLoss::uniform(&[0.5, 1.0]),
        &DiscreteLoss::uniform(&[0.2, 0.5, 1.0]),
    )?;
    let out = prepare_out(cfg)?;
    let path = out.join("theory.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path)(e.into()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::io(&path)(e.into()))?;
    }
    w.flush().map_err(CliError::io(&path))?;
    let outcome = TheoryOutcome {
        params: p,
        critical_threshold: n_star,
        predicted_crossover: n_star.floor() as usize + 1,
        empirical_crossover: crossover,
        trials: cfg.theory_trials,
        support_demo: demo,
    };
    output::write_json(&out.join("theory.json"), &outcome)?;
    Ok(outcome)
}

/// Mean input similarity against forecast loss across an intensity grid.
pub fn similarity(cfg: &RunConfig) -> Result<Vec<metrics::FidelityRow>, CliError> {
    let backend = build_backend(cfg)?;
    let series = load_series(cfg)?;
    let windows = windows(cfg, &series, cfg.context_length)?;
    let family = PerturbationSpec::new(cfg.family);
    let budget = *cfg.budgets.last().expect("validated budgets");
    let tree = SeedTree::new(cfg.master_seed).child("similarity", 0);
    let rows = metrics::fidelity_curve(
        backend.as_ref(),
        &windows,
        &family,
        &cfg.intensity_grid,
        budget,
        cfg.horizon,
        cfg.decode(),
        &tree,
    )?;
    let dir = prepare_out(cfg)?.join("plotdata");
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let path = dir.join(format!("fidelity_{}.csv", cfg.family.id()));
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path)(e.into()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::io(&path)(e.into()))?;
    }
    w.flush().map_err(CliError::io(&path))?;
    Ok(rows)
}

/// Probes an external backend; with `transcript`, also replays a recorded
/// session and requires byte-identical replies.
pub fn validate_backend(cfg: &RunConfig, transcript: Option<&Path>) -> Result<Vec<conformance::Check>, CliError> {
    let cmd = match cfg.backend_choice()? {
        BackendChoice::External(cmd) => cmd,
        _ => return Err(CliError::Config("validate-backend needs --backend external:CMD".into())),
    };
    let timeout = cfg.handshake_timeout();
    let probe = backend::spawn_external(&cmd, timeout)?;
    probe.set_request_timeout(Some(timeout));
    let (mut checks, recorded) = conformance::probe_session(&probe);
    drop(probe);
    let second = backend::spawn_external(&cmd, timeout)?;
    second.set_request_timeout(Some(timeout));
    checks.push(conformance::temperature_check(&second));
    drop(second);
    if let Some(path) = transcript {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let lines = conformance::parse_transcript(&text)?;
        let mismatches = conformance::replay(&cmd, &lines, timeout)?;
        checks.push(conformance::Check {
            name: "transcript_replay".into(),
            passed: mismatches.is_empty(),
            detail: match mismatches.first() {
                None => format!("{} lines identical", lines.len()),
                Some(m) => format!(
                    "{} mismatch(es); first at line {}: expected {} got {}",
                    mismatches.len(),
                    m.step + 1,
                    m.expected,
                    m.got
                ),
            },
        });
    }
    let out = prepare_out(cfg)?;
    output::write_json(&out.join("conformance.json"), &checks)?;
    std::fs::write(out.join("transcript.jsonl"), conformance::render_transcript(&recorded))
        .map_err(CliError::io(&out))?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if failed > 0 {
        return Err(CliError::Conformance(failed));
    }
    Ok(checks)
}
