//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Every expected value is recomputed here from first principles (closed
//! forms, brute-force minima, sort-based medians, Fourier projections) rather
//! than taken from the library under test.

#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use divscale_core::backend::conformance::{
    parse_transcript, probe_session, render_transcript, replay, GOLDEN_TRANSCRIPT,
};
use divscale_core::backend::{spawn_external, SeasonalAr, SeasonalArConfig, TwoPoint, TwoPointConfig};
use divscale_core::decomposition::stl_decompose;
use divscale_core::engine::{exact_match, generate_pool, majority_vote, DecodeConfig, SamplingPlan};
use divscale_core::metrics::{robust_mse, RobustMseOptions};
use divscale_core::perturbation::{
    perturb, structured_perturbation, DirectionField, ParamDist, PerturbationKind, PerturbationSpec, StrategyClass, EPS,
};
use divscale_core::theory::{
    critical_threshold, empirical_crossover, expected_min_em, mc_expected_min, mc_expected_min_dist,
    support_expansion_demo, DiscreteLoss, TheoryParams,
};
use divscale_core::{CandidatePool, Forecast, SeedTree, TimeSeries};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn closed_form_min(rho: f64, lg: f64, lb: f64, n: usize) -> f64 {
    let miss = (1.0 - rho).powf(n as f64);
    miss * lb + (1.0 - miss) * lg
}

/// Standard error of a mean of `trials` two-point minima.
fn closed_form_se(rho: f64, lg: f64, lb: f64, n: usize, trials: usize) -> f64 {
    let miss = (1.0 - rho).powf(n as f64);
    (miss * (1.0 - miss)).sqrt() * (lb - lg) / (trials as f64).sqrt()
}

fn random_series(rng: &mut impl Rng, len: usize, period: usize) -> Vec<f64> {
    let level = rng.random_range(-20.0..20.0);
    let slope = rng.random_range(-0.1..0.1);
    let amp = rng.random_range(0.0..5.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let noise = rng.random_range(0.0..2.0);
    (0..len)
        .map(|t| {
            let t = t as f64;
            level + slope * t + amp * (2.0 * PI * t / period as f64 + phase).sin() + noise * (rng.random::<f64>() - 0.5)
        })
        .collect()
}

// ---------------------------------------------------------------- theory

fn critical_threshold_and_crossover() -> Outcome {
    let start = Instant::now();
    let p = TheoryParams::new(0.3, 0.5, 2.0, 1.0);
    let n_star = critical_threshold(&p).map_err(err)?;
    let oracle = 3.0f64.ln() / (1.0f64 / 0.7).ln();
    ensure(
        (n_star - 3.0799).abs() <= 1e-3 && (n_star - oracle).abs() < 1e-12,
        || format!("N* = {n_star}, oracle {oracle}"),
    )?;
    let named = empirical_crossover(&p, 100_000, 0).map_err(err)?;
    ensure(named == 4, || format!("named case crossover {named}, expected 4"))?;

    let mut rng = SeedTree::new(2024).child("random-params", 0).rng();
    let mut sets = 0;
    let mut mismatches = Vec::new();
    while sets < 50 {
        let rho = rng.random_range(0.3..0.9);
        let lg = rng.random_range(0.0..1.0);
        let gap = rng.random_range(0.1..1.0);
        let r = rng.random_range(0.25..0.9);
        let (l0, lb) = (lg + gap, lg + gap / r);
        let p = TheoryParams::new(rho, lg, lb, l0);
        let ns = (1.0 / r).ln() / (1.0 / (1.0 - rho)).ln();
        if (ns - ns.round()).abs() < 0.05 {
            continue;
        }
        let lib = critical_threshold(&p).map_err(err)?;
        ensure((lib - ns).abs() < 1e-9, || format!("N* {lib} against oracle {ns}"))?;
        let expected = ns.floor() as usize + 1;
        let got = empirical_crossover(&p, 1_000_000, 1000 + sets as u64).map_err(err)?;
        if got != expected {
            mismatches.push(format!("rho={rho:.3} r={r:.3}: {got} vs {expected}"));
        }
        sets += 1;
    }
    ensure(mismatches.is_empty(), || {
        format!("{} of 50 sets disagree: {:?}", mismatches.len(), mismatches)
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "N* = {n_star:.4}, crossover 4, 50/50 random sets, {elapsed:.1?}"
    ))
}

fn monte_carlo_matches_closed_form() -> Outcome {
    let start = Instant::now();
    let (lg, lb, trials) = (0.5, 2.0, 100_000);
    let mut worst: f64 = 0.0;
    let mut combos = 0;
    for (i, rho) in [0.1, 0.3, 0.5].into_iter().enumerate() {
        for (j, n) in [1, 2, 4, 8, 16, 32, 64, 128, 256].into_iter().enumerate() {
            let p = TheoryParams::new(rho, lg, lb, 1.0);
            let exact = closed_form_min(rho, lg, lb, n);
            let lib = expected_min_em(&p, n).map_err(err)?;
            ensure((lib - exact).abs() < 1e-12, || {
                format!("closed form {lib} vs oracle {exact}")
            })?;
            let mc = mc_expected_min(&p, n, trials, (i * 100 + j) as u64).map_err(err)?;
            let se = closed_form_se(rho, lg, lb, n, trials);
            let z = (mc.mean - exact).abs() / se;
            ensure(z <= 3.0, || {
                format!("rho={rho} N={n}: MC {} vs {exact} ({z:.2} se)", mc.mean)
            })?;
            worst = worst.max(z);
            combos += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{combos} combinations, worst deviation {worst:.2} se, {elapsed:.1?}"
    ))
}

fn support_expansion() -> Outcome {
    let standard = DiscreteLoss::uniform(&[0.5, 1.0]);
    let diversified = DiscreteLoss::uniform(&[0.2, 0.5, 1.0]);
    ensure(
        standard.probs.iter().chain(&diversified.probs).all(|p| *p >= 0.1),
        || "support mass below 0.1".into(),
    )?;
    let demo = support_expansion_demo(&standard, &diversified).map_err(err)?;
    ensure(demo.lim_std == 0.5 && demo.lim_div == 0.2 && demo.strict, || {
        format!("{demo:?}")
    })?;
    let tree = SeedTree::new(11);
    for rep in 0..100u64 {
        let s = mc_expected_min_dist(&standard, 1024, 1, tree.derive("standard", rep)).map_err(err)?;
        let d = mc_expected_min_dist(&diversified, 1024, 1, tree.derive("diversified", rep)).map_err(err)?;
        ensure((s.mean - 0.5).abs() <= 1e-3 && (d.mean - 0.2).abs() <= 1e-3, || {
            format!("repetition {rep}: standard {} diversified {}", s.mean, d.mean)
        })?;
    }
    Ok("limits 0.5 / 0.2 in 100/100 repetitions at N=1024".into())
}

// ----------------------------------------------------------- aggregation

fn oracle_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn oracle_median(mut col: Vec<f64>) -> f64 {
    col.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = col.len();
    if n % 2 == 1 {
        col[n / 2]
    } else {
        (col[n / 2 - 1] + col[n / 2]) / 2.0
    }
}

fn draw(rng: &mut impl Rng, coarse: bool) -> f64 {
    if coarse {
        rng.random_range(0..3) as f64
    } else {
        rng.random_range(-5.0..5.0)
    }
}

fn aggregation_exactness() -> Outcome {
    let mut rng = SeedTree::new(5).rng();
    let mut tie_pools = 0;
    for pool_index in 0..1000 {
        let n = rng.random_range(1..=48usize);
        let horizon = rng.random_range(1..=6usize);
        let channels = rng.random_range(1..=2usize);
        let width = horizon * channels;
        // A third of the pools draw from a tiny value set to force ties.
        let coarse = pool_index % 3 == 0;
        let cands: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..width).map(|_| draw(&mut rng, coarse)).collect())
            .collect();
        let truth_flat: Vec<f64> = (0..width).map(|_| draw(&mut rng, coarse)).collect();
        let pool = CandidatePool::from_candidates(
            cands
                .iter()
                .map(|c| Forecast::from_flat(c.clone(), channels).unwrap())
                .collect(),
        )
        .map_err(err)?;
        let truth = Forecast::from_flat(truth_flat.clone(), channels).map_err(err)?;
        let budgets: Vec<usize> = (1..=n).collect();

        let em = exact_match(&pool, &truth, &budgets).map_err(err)?;
        let losses: Vec<f64> = cands.iter().map(|c| oracle_mse(c, &truth_flat)).collect();
        let mut prev = f64::INFINITY;
        for (k, point) in em.iter().enumerate() {
            let prefix = &losses[..=k];
            let best = prefix.iter().copied().fold(f64::INFINITY, f64::min);
            let first = prefix.iter().position(|l| *l == best).unwrap();
            if prefix.iter().filter(|l| **l == best).count() > 1 {
                tie_pools += 1;
            }
            ensure(point.loss == best && point.index == first, || {
                format!(
                    "pool {pool_index} N={}: EM {} at {} vs oracle {best} at {first}",
                    k + 1,
                    point.loss,
                    point.index
                )
            })?;
            ensure(point.loss <= prev, || {
                format!("pool {pool_index}: EM increased at N={}", k + 1)
            })?;
            prev = point.loss;
        }

        let mv = majority_vote(&pool, &budgets).map_err(err)?;
        for (k, agg) in mv.iter().enumerate() {
            for e in 0..width {
                let expect = oracle_median(cands[..=k].iter().map(|c| c[e]).collect());
                ensure(agg.flat()[e] == expect, || {
                    format!(
                        "pool {pool_index} N={} element {e}: MV {} vs {expect}",
                        k + 1,
                        agg.flat()[e]
                    )
                })?;
            }
        }
    }

    let even = CandidatePool::from_candidates(vec![
        Forecast::univariate(vec![1.0, 3.0]).unwrap(),
        Forecast::univariate(vec![2.0, 5.0]).unwrap(),
        Forecast::univariate(vec![9.0, 4.0]).unwrap(),
        Forecast::univariate(vec![0.0, 0.0]).unwrap(),
    ])
    .map_err(err)?;
    let mv = majority_vote(&even, &[2, 4]).map_err(err)?;
    ensure(mv[0].flat() == [1.5, 4.0] && mv[1].flat() == [1.5, 3.5], || {
        format!("even-n medians {mv:?}")
    })?;
    Ok(format!(
        "1000 pools against brute force ({tie_pools} prefixes with ties), even-n midpoint"
    ))
}

// ---------------------------------------------------------- perturbation

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn perturbation_contracts() -> Outcome {
    let mut rng = SeedTree::new(6).rng();
    let mut norm_checked = 0;
    for case in 0..500u64 {
        let period = rng.random_range(2..=24usize);
        let len = rng.random_range(2 * period + 2..=2 * period + 200);
        let values = random_series(&mut rng, len, period);
        let x = TimeSeries::univariate(values.clone()).map_err(err)?;
        let eta = rng.random_range(0.01..0.5);

        for kind in [DirectionField::Sensitivity, DirectionField::Dependency] {
            let tr = structured_perturbation(&values, kind, period, 5, eta).map_err(err)?;
            let diff: Vec<f64> = tr.output.iter().zip(&values).map(|(a, b)| a - b).collect();
            if norm(&tr.centered) >= 99.0 * EPS {
                let ratio = norm(&diff) / norm(&values);
                ensure(ratio >= 0.99 * eta && ratio <= eta * (1.0 + 1e-9), || {
                    format!("case {case} {kind:?}: ratio {ratio} for eta {eta}")
                })?;
                norm_checked += 1;
            }
            let m = tr.centered.iter().sum::<f64>() / len as f64;
            ensure(m.abs() <= 1e-9, || {
                format!("case {case} {kind:?}: mean of direction {m}")
            })?;
            for t in 0..len {
                if tr.field[t] != 0.0 {
                    ensure(sign(tr.signed[t]) == sign(values[t] + EPS), || {
                        format!("case {case} {kind:?}: sign at {t}")
                    })?;
                }
            }
        }

        let seed = SeedTree::new(case).derive("perturb", 0);
        let gaussian0 = PerturbationSpec::new(PerturbationKind::Gaussian).with_eta(ParamDist::Fixed(0.0));
        let mut missing0 = PerturbationSpec::new(PerturbationKind::Missing);
        missing0.params.mask_rate = 0.0;
        for spec in [PerturbationSpec::none(), gaussian0, missing0] {
            let out = perturb(&x, &spec, seed, None).map_err(err)?;
            ensure(out.series.flat() == x.flat(), || {
                format!("case {case}: {} is not the identity", spec.label())
            })?;
        }

        for kind in [
            PerturbationKind::Prefix,
            PerturbationKind::Suffix,
            PerturbationKind::Insertion,
        ] {
            let out = perturb(&x, &PerturbationSpec::new(kind), seed, None).map_err(err)?;
            let y = out.series.flat();
            let ell = y.len() - len;
            ensure((16..=32).contains(&ell), || {
                format!("case {case} {kind:?}: block length {ell}")
            })?;
            let preserved = match kind {
                PerturbationKind::Prefix => y[ell..] == values[..],
                PerturbationKind::Suffix => y[..len] == values[..],
                _ => (1..len).any(|at| {
                    y[..at] == values[..at]
                        && y[at + ell..] == values[at..]
                        && y[at..at + ell].iter().all(|v| *v == values[at - 1])
                }),
            };
            ensure(preserved, || {
                format!("case {case} {kind:?}: original samples not preserved")
            })?;
        }
    }
    Ok(format!("500 series, norm ratio checked on {norm_checked} directions"))
}

// --------------------------------------------------------- decomposition

/// Projection of `x` onto harmonics `1..period-1` of `period`; exact for
/// series spanning whole cycles.
fn fourier_seasonal(x: &[f64], period: usize) -> Vec<f64> {
    let len = x.len();
    let mean = x.iter().sum::<f64>() / len as f64;
    let mut out = vec![0.0; len];
    for k in 1..=period / 2 {
        let w = 2.0 * PI * k as f64 / period as f64;
        let (mut a, mut b) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            a += (v - mean) * (w * t as f64).cos();
            b += (v - mean) * (w * t as f64).sin();
        }
        let scale = if 2 * k == period { 1.0 } else { 2.0 } / len as f64;
        for (t, o) in out.iter_mut().enumerate() {
            *o += scale * (a * (w * t as f64).cos() + b * (w * t as f64).sin());
        }
    }
    out
}

fn decomposition_exactness() -> Outcome {
    let mut rng = SeedTree::new(7).rng();
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let period = rng.random_range(2..=30usize);
        let len = rng.random_range(2 * period..=2 * period + 300);
        let x = random_series(&mut rng, len, period);
        let d = stl_decompose(&x, period).map_err(err)?;
        for t in 0..len {
            let e = (d.trend[t] + d.seasonal[t] + d.residual[t] - x[t]).abs();
            worst = worst.max(e);
            ensure(e <= 1e-9, || format!("case {case}: reconstruction error {e} at {t}"))?;
        }
    }

    let mut worst_sine: f64 = 0.0;
    for period in [4usize, 7, 12, 24] {
        let cycles = 6;
        let x: Vec<f64> = (0..period * cycles)
            .map(|t| 3.0 + 2.0 * (2.0 * PI * t as f64 / period as f64 + 0.4).sin())
            .collect();
        let oracle = fourier_seasonal(&x, period);
        let d = stl_decompose(&x, period).map_err(err)?;
        for t in 0..x.len() {
            let e = (d.seasonal[t] - oracle[t]).abs().max(d.residual[t].abs());
            worst_sine = worst_sine.max(e);
            ensure(e <= 1e-6, || {
                format!("period {period}: seasonal/residual error {e} at {t}")
            })?;
        }
    }
    Ok(format!(
        "500 series max error {worst:.1e}; sinusoid error {worst_sine:.1e}"
    ))
}

// ----------------------------------------------------------- end to end

fn two_point_end_to_end() -> Outcome {
    let start = Instant::now();
    let (rho, lg, lb, l0) = (0.3, 0.5, 2.0, 1.0);
    let backend = TwoPoint::new(TwoPointConfig::from_losses(rho, lg, lb)).map_err(err)?;
    let budgets = [1usize, 2, 4, 8, 16];
    let (windows, horizon) = (10_000, 4);
    let truth = Forecast::univariate(vec![0.0; horizon]).map_err(err)?;
    let mut rng = SeedTree::new(8).rng();
    let tree = SeedTree::new(8).child("windows", 0);
    let mut losses = vec![Vec::with_capacity(windows); budgets.len()];
    for w in 0..windows {
        let ctx = TimeSeries::univariate(random_series(&mut rng, 32, 8)).map_err(err)?;
        let plan = SamplingPlan::diversified(
            PerturbationSpec::new(PerturbationKind::Gaussian),
            16,
            horizon,
            DecodeConfig::default(),
            tree.child("window", w as u64),
        );
        let pool = generate_pool(&backend, &plan, &ctx).map_err(err)?;
        for (k, point) in exact_match(&pool, &truth, &budgets).map_err(err)?.iter().enumerate() {
            losses[k].push(point.loss);
        }
    }
    let mut crossover = None;
    let mut worst: f64 = 0.0;
    for (k, &n) in budgets.iter().enumerate() {
        let v = &losses[k];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        let se = (var / v.len() as f64).sqrt();
        let exact = closed_form_min(rho, lg, lb, n);
        let z = (mean - exact).abs() / se;
        ensure(z <= 3.0, || format!("N={n}: mean {mean} vs {exact} ({z:.2} se)"))?;
        worst = worst.max(z);
        if crossover.is_none() && mean < l0 {
            crossover = Some(n);
        }
    }
    ensure(crossover == Some(4), || format!("crossover {crossover:?}, expected 4"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{windows} windows, worst deviation {worst:.2} se, crossover 4, {elapsed:.1?}"
    ))
}

// ------------------------------------------------------------ determinism

fn divscale() -> &'static str {
    env!("CARGO_BIN_EXE_divscale")
}

fn run_sweep(config: &Path, out: &Path, jobs: usize, backend: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(divscale());
    cmd.args(["scale-sweep", "--config"]).arg(config).arg("--out").arg(out);
    cmd.args(["--jobs", &jobs.to_string(), "--seed", "17"]);
    if let Some(b) = backend {
        cmd.args(["--backend", b]);
    }
    let status = cmd.output().map_err(err)?;
    ensure(status.status.success(), || {
        format!(
            "scale-sweep exited {:?}: {}",
            status.status.code(),
            String::from_utf8_lossy(&status.stderr)
        )
    })
}

fn output_files(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let mut files = vec![(
        PathBuf::from("records.csv"),
        std::fs::read(dir.join("records.csv")).map_err(err)?,
    )];
    let mut plots: Vec<PathBuf> = std::fs::read_dir(dir.join("plotdata"))
        .map_err(err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    plots.sort();
    for p in plots {
        let bytes = std::fs::read(&p).map_err(err)?;
        files.push((PathBuf::from(p.file_name().unwrap()), bytes));
    }
    Ok(files)
}

fn sweep_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let config = dir.path().join("sweep.json");
    std::fs::write(
        &config,
        r#"{
  "synthetic_length": 600,
  "context_length": 96,
  "horizon": 24,
  "stride": 48,
  "max_windows": 6,
  "budgets": [1, 2, 4, 8],
  "max_budget": 8,
  "trials": 2,
  "sweep": "temperature",
  "temperature_grid": [0.0, 0.7],
  "perturbations": [{"kind": "none"}, {"kind": "gaussian"}, {"kind": "sensitivity"}, {"kind": "insertion"}],
  "backend_procs": 2
}"#,
    )
    .map_err(err)?;
    let external = format!("external:{} mock-backend", divscale());
    let mut compared = 0;
    for (label, backend) in [("seasonal-ar", None), ("external", Some(external.as_str()))] {
        let mut runs = Vec::new();
        for (k, jobs) in [1usize, 4, 4].into_iter().enumerate() {
            let out = dir.path().join(format!("{label}-{k}"));
            run_sweep(&config, &out, jobs, backend)?;
            runs.push(output_files(&out)?);
        }
        let rows = String::from_utf8_lossy(&runs[0][0].1).lines().count() - 1;
        ensure(rows == 4 * 2 * 2 * 6 * 4 * 2, || format!("{label}: {rows} record rows"))?;
        for other in &runs[1..] {
            ensure(other.len() == runs[0].len(), || format!("{label}: file sets differ"))?;
            for ((name, a), (_, b)) in runs[0].iter().zip(other) {
                ensure(a == b, || format!("{label}: {} differs between runs", name.display()))?;
                compared += 1;
            }
        }
    }
    Ok(format!(
        "{compared} output files byte-identical across jobs 1/4/4 for two backends"
    ))
}

// --------------------------------------------------------------- protocol

fn protocol_conformance() -> Outcome {
    let command = vec![divscale().to_string(), "mock-backend".to_string()];
    let timeout = Duration::from_secs(10);
    let backend = spawn_external(&command, timeout).map_err(err)?;
    let (checks, transcript) = probe_session(&backend);
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| &c.name).collect();
    ensure(failed.is_empty(), || format!("failed probes {failed:?}"))?;
    ensure(render_transcript(&transcript) == GOLDEN_TRANSCRIPT, || {
        "session differs from the golden transcript".into()
    })?;

    let golden = parse_transcript(GOLDEN_TRANSCRIPT).map_err(err)?;
    let mismatches = replay(&command, &golden, timeout).map_err(err)?;
    ensure(mismatches.is_empty(), || format!("replay mismatches {mismatches:?}"))?;

    let mut versioned = command.clone();
    versioned.extend(["--proto".to_string(), "2".to_string()]);
    match spawn_external(&versioned, timeout) {
        Err(e) if e.to_string().contains("version") => {}
        Err(e) => return Err(format!("version mismatch reported as {e}")),
        Ok(_) => return Err("protocol version 2 was accepted".into()),
    }
    Ok(format!(
        "{} probes, {} transcript lines bit-exact, version mismatch rejected",
        checks.len(),
        golden.len()
    ))
}

// --------------------------------------------------------------- metrics

fn robust_mse_semantics() -> Outcome {
    let horizon = 8;
    let windows: Vec<(TimeSeries, Forecast)> = (0..6)
        .map(|w| {
            let series: Vec<f64> = (0..120 + horizon)
                .map(|t| 5.0 + 2.0 * (2.0 * PI * (t + 7 * w) as f64 / 24.0).sin() + 0.01 * t as f64)
                .collect();
            (
                TimeSeries::univariate(series[..120].to_vec()).unwrap(),
                Forecast::univariate(series[120..].to_vec()).unwrap(),
            )
        })
        .collect();
    let ar = SeasonalAr::new(SeasonalArConfig::default()).map_err(err)?;
    let mut opts = RobustMseOptions::new(horizon, StrategyClass::TaskAgnostic);
    opts.budget = 8;
    opts.decode = DecodeConfig {
        temperature: 0.0,
        top_p: 1.0,
    };
    let valid = [PerturbationSpec::none()];
    let tree = SeedTree::new(3);
    opts.trials = 5;
    let five = robust_mse(&ar, &windows, &valid, &opts, &tree).map_err(err)?;
    opts.trials = 1;
    let one = robust_mse(&ar, &windows, &valid, &opts, &tree).map_err(err)?;
    for (name, a, b) in [
        ("em", five.per_aggregator.em, one.per_aggregator.em),
        ("mv", five.per_aggregator.mv, one.per_aggregator.mv),
    ] {
        ensure(a.mean == b.mean && a.std == 0.0, || {
            format!("deterministic {name}: {a:?} vs single trial {b:?}")
        })?;
    }

    let (rho, lg, lb) = (0.3, 0.5, 2.0);
    let tp = TwoPoint::new(TwoPointConfig::from_losses(rho, lg, lb)).map_err(err)?;
    let zero_windows: Vec<(TimeSeries, Forecast)> = windows
        .iter()
        .map(|(ctx, _)| (ctx.clone(), Forecast::univariate(vec![0.0; horizon]).unwrap()))
        .collect();
    let mut opts = RobustMseOptions::new(horizon, StrategyClass::TaskAgnostic);
    opts.trials = 5;
    let report = robust_mse(
        &tp,
        &zero_windows,
        &[PerturbationSpec::new(PerturbationKind::Gaussian)],
        &opts,
        &tree,
    )
    .map_err(err)?;
    let em = report.per_aggregator.em;
    ensure(
        report.budget == 64 && (em.mean - lg).abs() <= 3.0 * em.std + 1e-12,
        || format!("two-point EM at N=64: {em:?}, L_good {lg}"),
    )?;
    Ok(format!(
        "deterministic std 0 (em {:.4}); two-point EM at N=64 = {:.4} +/- {:.4}",
        five.per_aggregator.em.mean, em.mean, em.std
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("critical threshold and crossover", critical_threshold_and_crossover),
        (
            "Monte Carlo expected minimum vs closed form",
            monte_carlo_matches_closed_form,
        ),
        ("support expansion limits", support_expansion),
        ("EM and MV exactness", aggregation_exactness),
        ("perturbation contracts", perturbation_contracts),
        ("decomposition exactness", decomposition_exactness),
        ("two-point backend end to end", two_point_end_to_end),
        ("sweep determinism across thread counts", sweep_determinism),
        ("wire protocol conformance", protocol_conformance),
        ("RobustMSE semantics", robust_mse_semantics),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
