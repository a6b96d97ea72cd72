//! Input perturbations for diversified sampling.
//!
//! Each strategy is a seeded stochastic map `X -> X'`. Structural strategies
//! (prefix, suffix, insertion) lengthen the series by `len`; everything else
//! preserves length. The two structure-aware strategies build a direction
//! field from an additive decomposition, align it with the sign of the input,
//! center it, and scale it so that `|X' - X| = eta * |X|` up to the `EPS`
//! regularizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, BackendError, Forecaster};
use crate::decomposition::{self, gradient, local_std, roll, DecompositionError};
use crate::error::CoreError;
use crate::seed::{rng_from_seed, SeedTree};
use crate::similarity::cosine;
use crate::types::TimeSeries;

/// Regularizer for the sign tiebreak and the norm denominator.
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerturbationError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Series(#[from] CoreError),
    #[error("reconstruction perturbation needs a backend")]
    MissingBackend,
}

type Result<T> = std::result::Result<T, PerturbationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    None,
    Prefix,
    Suffix,
    Insertion,
    Gaussian,
    #[serde(rename = "random")]
    RandomOffset,
    Missing,
    Sensitivity,
    Dependency,
    Reconstruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyClass {
    TaskAgnostic,
    TaskSpecific,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 10] = [
        PerturbationKind::None,
        PerturbationKind::Prefix,
        PerturbationKind::Suffix,
        PerturbationKind::Insertion,
        PerturbationKind::Gaussian,
        PerturbationKind::RandomOffset,
        PerturbationKind::Missing,
        PerturbationKind::Sensitivity,
        PerturbationKind::Dependency,
        PerturbationKind::Reconstruction,
    ];

    /// Stable identifier used in configs and output files.
    pub fn id(self) -> &'static str {
        match self {
            PerturbationKind::None => "none",
            PerturbationKind::Prefix => "prefix",
            PerturbationKind::Suffix => "suffix",
            PerturbationKind::Insertion => "insertion",
            PerturbationKind::Gaussian => "gaussian",
            PerturbationKind::RandomOffset => "random",
            PerturbationKind::Missing => "missing",
            PerturbationKind::Sensitivity => "sensitivity",
            PerturbationKind::Dependency => "dependency",
            PerturbationKind::Reconstruction => "reconstruction",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn is_structural(self) -> bool {
        matches!(
            self,
            PerturbationKind::Prefix | PerturbationKind::Suffix | PerturbationKind::Insertion
        )
    }

    pub fn class(self) -> StrategyClass {
        match self {
            PerturbationKind::Sensitivity | PerturbationKind::Dependency | PerturbationKind::Reconstruction => {
                StrategyClass::TaskSpecific
            }
            _ => StrategyClass::TaskAgnostic,
        }
    }

    /// Strategies with a documented tendency to degrade forecasts.
    pub fn known_bad(self) -> bool {
        self == PerturbationKind::Suffix
    }
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// A scalar parameter: fixed, uniform on `[low, high]`, or a uniform choice
/// from a list. Written in config files as `0.1`, `{"low":0.01,"high":0.05}`,
/// or `[0.05, 0.1, 0.2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamDist {
    Fixed(f64),
    Choice(Vec<f64>),
    Uniform { low: f64, high: f64 },
}

impl ParamDist {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ParamDist::Fixed(v) => *v,
            ParamDist::Choice(vals) => vals[rng.random_range(0..vals.len())],
            ParamDist::Uniform { low, high } if low == high => *low,
            ParamDist::Uniform { low, high } => rng.random_range(*low..*high),
        }
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            ParamDist::Fixed(v) => Some((*v, *v)),
            ParamDist::Choice(vals) if !vals.is_empty() => Some((
                vals.iter().copied().fold(f64::INFINITY, f64::min),
                vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )),
            ParamDist::Choice(_) => None,
            ParamDist::Uniform { low, high } if low <= high => Some((*low, *high)),
            ParamDist::Uniform { .. } => None,
        }
    }

    fn short(&self) -> String {
        match self {
            ParamDist::Fixed(v) => format!("{v}"),
            ParamDist::Choice(vals) => {
                let parts: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
                format!("{{{}}}", parts.join("|"))
            }
            ParamDist::Uniform { low, high } => format!("U({low},{high})"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    /// `c ~ U[-sigma, sigma]`.
    #[default]
    Continuous,
    /// `c` is `-sigma` or `+sigma` with equal probability.
    Discrete,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingSentinel {
    #[default]
    Zero,
    Nan,
}

impl MissingSentinel {
    fn value(self) -> f64 {
        match self {
            MissingSentinel::Zero => 0.0,
            MissingSentinel::Nan => f64::NAN,
        }
    }
}

/// Strategy parameters. Only the fields relevant to the strategy are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationParams {
    /// Inclusive range of the inserted block length.
    pub pad_len: (usize, usize),
    /// Padding value on the z-scored scale of each channel.
    pub pad_value: ParamDist,
    /// Insertion point as a fraction of `L`.
    pub insert_at: (f64, f64),
    /// Intensity; defaults to 0.1 for Gaussian noise and `U(0.01, 0.05)` for
    /// the structure-aware strategies.
    pub eta: Option<ParamDist>,
    pub offset_mode: OffsetMode,
    /// Multiplier on the offset bound (`c ~ U[-k sigma, k sigma]`).
    pub offset_scale: f64,
    pub mask_rate: f64,
    pub sentinel: MissingSentinel,
    /// Seasonal period; inferred from the series frequency hint when absent.
    pub period: Option<usize>,
    pub window: usize,
    pub temperature: ParamDist,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        Self {
            pad_len: (16, 32),
            pad_value: ParamDist::Uniform { low: -1.0, high: 1.0 },
            insert_at: (0.3, 0.7),
            eta: None,
            offset_mode: OffsetMode::Continuous,
            offset_scale: 1.0,
            mask_rate: 0.1,
            sentinel: MissingSentinel::Zero,
            period: None,
            window: 5,
            temperature: ParamDist::Fixed(0.6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    #[serde(default)]
    pub params: PerturbationParams,
    #[serde(default)]
    pub seed_label: String,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind) -> Self {
        Self {
            kind,
            params: PerturbationParams::default(),
            seed_label: kind.id().to_owned(),
        }
    }

    pub fn none() -> Self {
        Self::new(PerturbationKind::None)
    }

    pub fn with_eta(mut self, eta: ParamDist) -> Self {
        self.params.eta = Some(eta);
        self
    }

    pub fn with_params(mut self, params: PerturbationParams) -> Self {
        self.params = params;
        self
    }

    pub fn id(&self) -> &'static str {
        self.kind.id()
    }

    pub fn eta(&self) -> ParamDist {
        self.params.eta.clone().unwrap_or(match self.kind {
            PerturbationKind::Sensitivity | PerturbationKind::Dependency => {
                ParamDist::Uniform { low: 0.01, high: 0.05 }
            }
            _ => ParamDist::Fixed(0.1),
        })
    }

    /// Human-readable configuration label, unique within a default grid.
    pub fn label(&self) -> String {
        let p = &self.params;
        match self.kind {
            PerturbationKind::None => "none".into(),
            PerturbationKind::Prefix | PerturbationKind::Suffix | PerturbationKind::Insertion => {
                format!("{}[len={}..{}]", self.id(), p.pad_len.0, p.pad_len.1)
            }
            PerturbationKind::Gaussian | PerturbationKind::Sensitivity | PerturbationKind::Dependency => {
                format!("{}[eta={}]", self.id(), self.eta().short())
            }
            PerturbationKind::RandomOffset => format!("random[scale={}]", p.offset_scale),
            PerturbationKind::Missing => format!("missing[rate={}]", p.mask_rate),
            PerturbationKind::Reconstruction => format!("reconstruction[tau={}]", p.temperature.short()),
        }
    }

    /// Copy with the strategy's main knob fixed to `intensity`: noise scale
    /// for Gaussian and the structure-aware strategies, offset multiplier,
    /// mask rate, block length, or reconstruction temperature.
    pub fn with_intensity(&self, intensity: f64) -> Self {
        let mut s = self.clone();
        match s.kind {
            PerturbationKind::None => {}
            PerturbationKind::Prefix | PerturbationKind::Suffix | PerturbationKind::Insertion => {
                let n = intensity.max(0.0).round() as usize;
                s.params.pad_len = (n, n);
            }
            PerturbationKind::Gaussian | PerturbationKind::Sensitivity | PerturbationKind::Dependency => {
                s.params.eta = Some(ParamDist::Fixed(intensity));
            }
            PerturbationKind::RandomOffset => s.params.offset_scale = intensity,
            PerturbationKind::Missing => s.params.mask_rate = intensity,
            PerturbationKind::Reconstruction => s.params.temperature = ParamDist::Fixed(intensity),
        }
        s
    }

    /// The default configuration grid for a strategy: Gaussian noise at
    /// eta in {0.05, 0.1, 0.2}, reconstruction at tau in {0.3, ..., 0.9},
    /// one default configuration otherwise.
    pub fn default_grid(kind: PerturbationKind) -> Vec<PerturbationSpec> {
        match kind {
            PerturbationKind::Gaussian => [0.05, 0.1, 0.2]
                .iter()
                .map(|&e| PerturbationSpec::new(kind).with_eta(ParamDist::Fixed(e)))
                .collect(),
            PerturbationKind::Reconstruction => (3..=9)
                .map(|t| {
                    let mut s = PerturbationSpec::new(kind);
                    s.params.temperature = ParamDist::Fixed(t as f64 / 10.0);
                    s
                })
                .collect(),
            _ => vec![PerturbationSpec::new(kind)],
        }
    }

    /// Checks parameter ranges for this strategy.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |m: String| Err(PerturbationError::InvalidParameter(m));
        match self.kind {
            PerturbationKind::None => Ok(()),
            PerturbationKind::Prefix | PerturbationKind::Suffix | PerturbationKind::Insertion => {
                if p.pad_len.0 > p.pad_len.1 {
                    return bad(format!("pad_len range {:?} is empty", p.pad_len));
                }
                if self.kind == PerturbationKind::Insertion {
                    let (lo, hi) = p.insert_at;
                    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                        return bad(format!("insert_at {:?} must be a sub-range of [0, 1]", p.insert_at));
                    }
                } else if p.pad_value.bounds().is_none() {
                    return bad("pad_value distribution is empty".into());
                }
                Ok(())
            }
            PerturbationKind::Gaussian | PerturbationKind::Sensitivity | PerturbationKind::Dependency => {
                match self.eta().bounds() {
                    Some((lo, hi)) if lo >= 0.0 && hi.is_finite() => {}
                    _ => return bad(format!("eta {:?} must be finite and >= 0", self.eta())),
                }
                if self.kind == PerturbationKind::Dependency && (p.window == 0 || p.window.is_multiple_of(2)) {
                    return bad(format!("window {} must be odd", p.window));
                }
                if p.period.is_some_and(|v| v < 2) {
                    return bad("period must be >= 2".into());
                }
                Ok(())
            }
            PerturbationKind::RandomOffset => {
                if !(p.offset_scale >= 0.0 && p.offset_scale.is_finite()) {
                    return bad(format!("offset_scale {} must be >= 0", p.offset_scale));
                }
                Ok(())
            }
            PerturbationKind::Missing => {
                if !(0.0..1.0).contains(&p.mask_rate) {
                    return bad(format!("mask_rate {} must be in [0, 1)", p.mask_rate));
                }
                Ok(())
            }
            PerturbationKind::Reconstruction => match p.temperature.bounds() {
                Some((lo, _)) if lo >= 0.0 => Ok(()),
                _ => bad("temperature must be >= 0".into()),
            },
        }
    }
}

/// A perturbed context together with its similarity to the original.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedInput {
    pub series: TimeSeries,
    /// Cosine similarity between the most recent `min(L, L')` points of the
    /// perturbed and original series.
    pub source_similarity: f64,
    pub spec: PerturbationSpec,
    pub seed: u64,
}

/// Applies `spec` to `x` with randomness keyed by `seed`.
/// `reconstructor` is required for the reconstruction strategy only.
pub fn perturb(
    x: &TimeSeries,
    spec: &PerturbationSpec,
    seed: u64,
    reconstructor: Option<&dyn Forecaster>,
) -> Result<PerturbedInput> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let p = &spec.params;
    let series = match spec.kind {
        PerturbationKind::None => x.clone(),
        PerturbationKind::Prefix | PerturbationKind::Suffix => {
            let len = rng.random_range(p.pad_len.0..=p.pad_len.1);
            let z = p.pad_value.sample(&mut rng);
            let c: Vec<f64> = (0..x.channels())
                .map(|d| {
                    let ch = x.channel(d);
                    mean(&ch) + z * sample_std(&ch)
                })
                .collect();
            if spec.kind == PerturbationKind::Prefix {
                prefix_pad(x, len, &c)?
            } else {
                suffix_pad(x, len, &c)?
            }
        }
        PerturbationKind::Insertion => {
            let len = rng.random_range(p.pad_len.0..=p.pad_len.1);
            let n = x.len();
            if n < 2 {
                return Err(PerturbationError::InvalidParameter("insertion needs L >= 2".into()));
            }
            let lo = ((p.insert_at.0 * n as f64).ceil() as usize).clamp(1, n - 1);
            let hi = ((p.insert_at.1 * n as f64).floor() as usize).clamp(lo, n - 1);
            let at = rng.random_range(lo..=hi);
            middle_insert(x, len, at)?
        }
        PerturbationKind::Gaussian => {
            let eta = spec.eta().sample(&mut rng);
            gaussian_noise(x, eta, &mut rng)?
        }
        PerturbationKind::RandomOffset => random_offset(x, p.offset_mode, p.offset_scale, &mut rng)?,
        PerturbationKind::Missing => missing_data(x, p.mask_rate, p.sentinel, &mut rng)?,
        PerturbationKind::Sensitivity | PerturbationKind::Dependency => {
            let eta = spec.eta().sample(&mut rng);
            let period = p
                .period
                .unwrap_or_else(|| decomposition::period_for_freq(x.freq_hint.as_deref()));
            let field = if spec.kind == PerturbationKind::Sensitivity {
                DirectionField::Sensitivity
            } else {
                DirectionField::Dependency
            };
            structured(x, field, period, p.window, eta)?
        }
        PerturbationKind::Reconstruction => {
            let backend = reconstructor.ok_or(PerturbationError::MissingBackend)?;
            let tau = p.temperature.sample(&mut rng);
            let inner = SeedTree::new(seed).derive("reconstruct", 0);
            task_reconstruction(x, tau, backend, inner)?
        }
    };
    let source_similarity = aligned_similarity(x, &series);
    Ok(PerturbedInput {
        series,
        source_similarity,
        spec: spec.clone(),
        seed,
    })
}

/// Cosine over the most recent `min(L, L')` time steps of both series.
pub fn aligned_similarity(original: &TimeSeries, perturbed: &TimeSeries) -> f64 {
    let n = original.len().min(perturbed.len());
    let a = original.tail(n);
    let b = perturbed.tail(n);
    if a.flat() == b.flat() {
        return 1.0;
    }
    cosine(a.flat(), b.flat()).unwrap_or(1.0)
}

/// `true` iff the perturbed input is at least `threshold`-similar to its source.
pub fn fidelity_gate(pi: &PerturbedInput, threshold: f64) -> bool {
    debug_assert!(threshold > 0.0 && threshold <= 1.0);
    pi.source_similarity >= threshold
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); 0 for a single point.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    // Shifted by the first point so constant input gives exactly 0.
    let d: Vec<f64> = v.iter().map(|x| x - v[0]).collect();
    let m = mean(&d);
    (d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn block(width: usize, len: usize, value: &[f64]) -> Vec<f64> {
    (0..len).flat_map(|_| value[..width].iter().copied()).collect()
}

/// Prepends `len` rows of the constant `value` (one entry per channel).
pub fn prefix_pad(x: &TimeSeries, len: usize, value: &[f64]) -> Result<TimeSeries> {
    check_block(x, len, value)?;
    let mut values = block(x.channels(), len, value);
    values.extend_from_slice(x.flat());
    Ok(TimeSeries::from_flat_unchecked(values, x.channels())?.with_meta_of(x))
}

/// Appends `len` rows of the constant `value` (one entry per channel).
pub fn suffix_pad(x: &TimeSeries, len: usize, value: &[f64]) -> Result<TimeSeries> {
    check_block(x, len, value)?;
    let mut values = x.flat().to_vec();
    values.extend(block(x.channels(), len, value));
    Ok(TimeSeries::from_flat_unchecked(values, x.channels())?.with_meta_of(x))
}

fn check_block(x: &TimeSeries, len: usize, value: &[f64]) -> Result<()> {
    if len == 0 {
        return Err(PerturbationError::InvalidParameter("block length must be >= 1".into()));
    }
    if value.len() != x.channels() {
        return Err(PerturbationError::InvalidParameter(format!(
            "{} pad values for {} channels",
            value.len(),
            x.channels()
        )));
    }
    Ok(())
}

/// Inserts `len` copies of `x_at` (1-based) right after position `at`.
pub fn middle_insert(x: &TimeSeries, len: usize, at: usize) -> Result<TimeSeries> {
    if at < 1 || at >= x.len() {
        return Err(PerturbationError::InvalidParameter(format!(
            "insertion point {at} outside 1..={}",
            x.len().saturating_sub(1)
        )));
    }
    let d = x.channels();
    let flat = x.flat();
    let mut values = flat[..at * d].to_vec();
    values.extend(block(d, len, x.row(at - 1)));
    values.extend_from_slice(&flat[at * d..]);
    Ok(TimeSeries::from_flat_unchecked(values, d)?.with_meta_of(x))
}

fn map_channels(x: &TimeSeries, mut f: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>) -> Result<TimeSeries> {
    let channels: Vec<Vec<f64>> = (0..x.channels()).map(|d| f(d, &x.channel(d))).collect::<Result<_>>()?;
    Ok(TimeSeries::from_channels_unchecked(&channels)?.with_meta_of(x))
}

/// Adds i.i.d. `N(0, (eta * sigma_d)^2)` noise, `sigma_d` the sample std of channel `d`.
pub fn gaussian_noise(x: &TimeSeries, eta: f64, rng: &mut ChaCha8Rng) -> Result<TimeSeries> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(PerturbationError::InvalidParameter(format!("eta {eta} must be >= 0")));
    }
    let scales: Vec<f64> = (0..x.channels()).map(|d| eta * sample_std(&x.channel(d))).collect();
    let d = x.channels();
    let values = x
        .flat()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = scales[i % d];
            if s > 0.0 {
                v + Normal::new(0.0, s).expect("positive scale").sample(rng)
            } else {
                *v
            }
        })
        .collect();
    Ok(TimeSeries::from_flat_unchecked(values, d)?.with_meta_of(x))
}

/// Shifts each channel by one constant `c` with `|c| <= scale * sigma_d`.
pub fn random_offset(x: &TimeSeries, mode: OffsetMode, scale: f64, rng: &mut ChaCha8Rng) -> Result<TimeSeries> {
    map_channels(x, |_, ch| {
        let bound = scale * sample_std(ch);
        let c = match mode {
            _ if bound == 0.0 => 0.0,
            OffsetMode::Continuous => rng.random_range(-bound..=bound),
            OffsetMode::Discrete => {
                if rng.random::<bool>() {
                    bound
                } else {
                    -bound
                }
            }
        };
        Ok(ch.iter().map(|v| v + c).collect())
    })
}

/// Replaces each entry with `sentinel` independently with probability `rate`.
pub fn missing_data(x: &TimeSeries, rate: f64, sentinel: MissingSentinel, rng: &mut ChaCha8Rng) -> Result<TimeSeries> {
    if !(0.0..1.0).contains(&rate) {
        return Err(PerturbationError::InvalidParameter(format!(
            "mask_rate {rate} must be in [0, 1)"
        )));
    }
    let fill = sentinel.value();
    let values = x
        .flat()
        .iter()
        .map(|&v| {
            if rate > 0.0 && rng.random::<f64>() < rate {
                fill
            } else {
                v
            }
        })
        .collect();
    Ok(TimeSeries::from_flat_unchecked(values, x.channels())?.with_meta_of(x))
}

/// Which structure-aware direction field to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionField {
    /// `|grad T| + |S - roll(S, p)| + |R|`
    Sensitivity,
    /// `grad T + |S| + local_std(R, w)`
    Dependency,
}

/// Intermediate values of one structure-aware perturbation of a single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredTrace {
    /// Direction field before the sign step.
    pub field: Vec<f64>,
    /// `sign(x + EPS) * |field|`.
    pub signed: Vec<f64>,
    /// `signed - mean(signed)`.
    pub centered: Vec<f64>,
    /// `eta * |x| / (|centered| + EPS)`.
    pub eta_eff: f64,
    pub output: Vec<f64>,
}

pub fn direction_field(x: &[f64], kind: DirectionField, period: usize, window: usize) -> Result<Vec<f64>> {
    let dec = decomposition::stl_decompose(x, period)?;
    let grad = gradient(&dec.trend)?;
    Ok(match kind {
        DirectionField::Sensitivity => {
            let shifted = roll(&dec.seasonal, period as i64);
            (0..x.len())
                .map(|t| grad[t].abs() + (dec.seasonal[t] - shifted[t]).abs() + dec.residual[t].abs())
                .collect()
        }
        DirectionField::Dependency => {
            let spread = local_std(&dec.residual, window)?;
            (0..x.len())
                .map(|t| grad[t] + dec.seasonal[t].abs() + spread[t])
                .collect()
        }
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Structure-aware perturbation of one channel, returning every stage.
pub fn structured_perturbation(
    x: &[f64],
    kind: DirectionField,
    period: usize,
    window: usize,
    eta: f64,
) -> Result<StructuredTrace> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(PerturbationError::InvalidParameter(format!("eta {eta} must be >= 0")));
    }
    let field = direction_field(x, kind, period, window)?;
    let signed: Vec<f64> = x.iter().zip(&field).map(|(v, f)| sign(v + EPS) * f.abs()).collect();
    let m = mean(&signed);
    let centered: Vec<f64> = signed.iter().map(|v| v - m).collect();
    let eta_eff = eta * l2(x) / (l2(&centered) + EPS);
    let output = x.iter().zip(&centered).map(|(v, f)| v + eta_eff * f).collect();
    Ok(StructuredTrace {
        field,
        signed,
        centered,
        eta_eff,
        output,
    })
}

fn structured(x: &TimeSeries, kind: DirectionField, period: usize, window: usize, eta: f64) -> Result<TimeSeries> {
    map_channels(x, |_, ch| {
        Ok(structured_perturbation(ch, kind, period, window, eta)?.output)
    })
}

/// Structure-sensitive perturbation (trend change, seasonal drift, residual magnitude).
pub fn task_sensitivity(x: &TimeSeries, eta: f64, period: usize) -> Result<TimeSeries> {
    structured(x, DirectionField::Sensitivity, period, 1, eta)
}

/// Structure-aligned perturbation (signed trend, seasonal magnitude, local residual spread).
pub fn task_dependency(x: &TimeSeries, eta: f64, period: usize, window: usize) -> Result<TimeSeries> {
    structured(x, DirectionField::Dependency, period, window, eta)
}

/// One stochastic reconstruction of `x` by `backend` at temperature `tau`.
pub fn task_reconstruction(x: &TimeSeries, tau: f64, backend: &dyn Forecaster, seed: u64) -> Result<TimeSeries> {
    Ok(backend::reconstruct(backend, x, tau, seed)?)
}
