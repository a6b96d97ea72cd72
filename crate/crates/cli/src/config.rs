//! Run configuration: a single JSON document with flat keys. Values resolve
//! as command-line flag, then config file, then built-in default.

use std::path::{Path, PathBuf};
use std::time::Duration;

use divscale_core::backend::{SeasonalArConfig, TwoPointConfig};
use divscale_core::engine::{default_budgets, DecodeConfig, PoolMode};
use divscale_core::metrics::ConfigCombine;
use divscale_core::perturbation::{PerturbationKind, PerturbationSpec};
use divscale_core::theory::TheoryParams;
use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendChoice {
    SeasonalAr,
    TwoPoint,
    /// Program and arguments, split on whitespace.
    External(Vec<String>),
}

impl BackendChoice {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "seasonal-ar" => Ok(BackendChoice::SeasonalAr),
            "two-point" => Ok(BackendChoice::TwoPoint),
            other => match other.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(BackendChoice::External(
                    cmd.split_whitespace().map(str::to_owned).collect(),
                )),
                _ => Err(CliError::Config(format!(
                    "unknown backend {other:?}; expected seasonal-ar, two-point or external:CMD"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    None,
    Temperature,
    ContextLength,
}

/// Reference loss for the failure rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Standard sampling at the same budget.
    #[default]
    Standard,
    /// A single standard sample.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: String,
    pub seasonal_ar: SeasonalArConfig,
    pub two_point: TwoPointConfig,
    pub backend_procs: usize,
    pub handshake_timeout_secs: f64,

    pub dataset: Option<PathBuf>,
    pub target: String,
    pub split: Split,
    /// Length of the generated series used when no dataset is given.
    pub synthetic_length: usize,

    pub context_length: usize,
    pub horizon: usize,
    pub stride: usize,
    pub max_windows: Option<usize>,
    pub budgets: Vec<usize>,
    pub max_budget: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub perturbations: Vec<PerturbationSpec>,
    pub sweep: SweepAxis,
    pub temperature_grid: Vec<f64>,
    pub context_grid: Vec<usize>,
    pub pool_mode: PoolMode,
    /// Z-score each window with its context statistics; losses are reported
    /// on the original scale.
    pub normalize: bool,
    pub master_seed: u64,
    pub trials: usize,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub skip_errors: bool,

    pub fidelity_threshold: Option<f64>,
    pub baseline_mode: BaselineMode,
    pub valid_set: Option<PathBuf>,
    pub robust_budget: usize,
    pub robust_trials: usize,
    pub combine: ConfigCombine,

    pub family: PerturbationKind,
    pub intensity_grid: Vec<f64>,

    pub theory_rho: f64,
    pub theory_loss_good: f64,
    pub theory_loss_bad: f64,
    pub theory_loss_0: f64,
    pub theory_trials: usize,
    pub theory_budgets: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: "seasonal-ar".into(),
            seasonal_ar: SeasonalArConfig::default(),
            two_point: TwoPointConfig::from_losses(0.3, 0.5, 2.0),
            backend_procs: 1,
            handshake_timeout_secs: 30.0,
            dataset: None,
            target: "OT".into(),
            split: Split::default(),
            synthetic_length: 1024,
            context_length: 512,
            horizon: 96,
            stride: 32,
            max_windows: None,
            budgets: default_budgets(),
            max_budget: 128,
            temperature: 0.7,
            top_p: 1.0,
            perturbations: Vec::new(),
            sweep: SweepAxis::None,
            temperature_grid: temperature_grid(),
            context_grid: vec![32, 64, 128, 256, 512, 1024],
            pool_mode: PoolMode::Nested,
            normalize: false,
            master_seed: 0,
            trials: 1,
            out: PathBuf::from("divscale-out"),
            jobs: None,
            skip_errors: false,
            fidelity_threshold: None,
            baseline_mode: BaselineMode::Standard,
            valid_set: None,
            robust_budget: 64,
            robust_trials: 5,
            combine: ConfigCombine::MinAcrossConfigs,
            family: PerturbationKind::Gaussian,
            intensity_grid: vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0],
            theory_rho: 0.3,
            theory_loss_good: 0.5,
            theory_loss_bad: 2.0,
            theory_loss_0: 1.0,
            theory_trials: 100_000,
            theory_budgets: (1..=16).collect(),
        }
    }
}

/// Thirteen temperatures, 0.0 to 1.2 in steps of 0.1.
pub fn temperature_grid() -> Vec<f64> {
    (0..=12).map(|k| k as f64 / 10.0).collect()
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub master_seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub target: Option<String>,
    pub backend: Option<String>,
    pub budgets: Option<Vec<usize>>,
    pub temperature: Option<f64>,
    pub context_length: Option<usize>,
    pub horizon: Option<usize>,
    pub stride: Option<usize>,
    pub skip_errors: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Default, then `file`, then `overrides`; validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &o.$f { self.$f = v.clone().into(); })*};
        }
        set!(
            master_seed,
            out,
            target,
            backend,
            budgets,
            temperature,
            context_length,
            horizon,
            stride
        );
        if o.dataset.is_some() {
            self.dataset = o.dataset.clone();
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
        self.skip_errors |= o.skip_errors;
    }

    /// Fills derived defaults and checks ranges.
    pub fn finish(&mut self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.backend_choice()?;
        if self.context_length == 0 || self.horizon == 0 || self.stride == 0 {
            return bad("context_length, horizon and stride must be >= 1".into());
        }
        if self.budgets.is_empty() {
            return bad("budgets must not be empty".into());
        }
        self.budgets.sort_unstable();
        self.budgets.dedup();
        if self.budgets[0] == 0 {
            return bad("budgets must be >= 1".into());
        }
        if *self.budgets.last().expect("non-empty") > self.max_budget {
            return bad(format!(
                "budget {} exceeds max_budget {}",
                self.budgets.last().expect("non-empty"),
                self.max_budget
            ));
        }
        if self.temperature.is_nan()
            || self.temperature < 0.0
            || !(0.0..=1.0).contains(&self.top_p)
            || self.top_p == 0.0
        {
            return bad("temperature must be >= 0 and top_p in (0, 1]".into());
        }
        if self.trials == 0 || self.robust_trials == 0 || self.robust_budget == 0 || self.backend_procs == 0 {
            return bad("trials, robust_trials, robust_budget and backend_procs must be >= 1".into());
        }
        if self.jobs == Some(0) {
            return bad("jobs must be >= 1".into());
        }
        if let Some(t) = self.fidelity_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("fidelity_threshold {t} must be in (0, 1]"));
            }
        }
        if self.temperature_grid.iter().any(|t| t.is_nan() || *t < 0.0) || self.context_grid.contains(&0) {
            return bad("sweep grids must hold non-negative temperatures and positive lengths".into());
        }
        for spec in &mut self.perturbations {
            if spec.seed_label.is_empty() {
                spec.seed_label = spec.kind.id().to_owned();
            }
            spec.validate()
                .map_err(|e| CliError::Config(format!("perturbation {}: {e}", spec.id())))?;
        }
        self.split.validate()?;
        Ok(())
    }

    pub fn backend_choice(&self) -> Result<BackendChoice, CliError> {
        BackendChoice::parse(&self.backend)
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }

    pub fn handshake_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.handshake_timeout_secs.max(0.001))
    }

    pub fn theory_params(&self) -> TheoryParams {
        TheoryParams::new(
            self.theory_rho,
            self.theory_loss_good,
            self.theory_loss_bad,
            self.theory_loss_0,
        )
    }

    /// Every non-identity strategy with its default configuration grid.
    pub fn default_perturbations() -> Vec<PerturbationSpec> {
        PerturbationKind::ALL
            .into_iter()
            .filter(|k| *k != PerturbationKind::None)
            .flat_map(PerturbationSpec::default_grid)
            .collect()
    }
}

/// Parses `"1,2,4"` into budgets.
pub fn parse_budgets(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}
