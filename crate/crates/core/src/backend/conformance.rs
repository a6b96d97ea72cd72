//! Conformance probes for external backends and golden-transcript replay.

use std::time::Duration;

use serde::Serialize;

use super::protocol::{self, CODE_BAD_REQUEST};
use super::{spawn_external, BackendError, ExternalBackend, ForecastRequest, Forecaster, TranscriptLine};
use crate::types::TimeSeries;

/// Transcript of [`probe_session`] against the in-repo mock backend.
pub const GOLDEN_TRANSCRIPT: &str = include_str!("../../data/mock_transcript.jsonl");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn render_transcript(lines: &[TranscriptLine]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

pub fn parse_transcript(text: &str) -> Result<Vec<TranscriptLine>, BackendError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| match l.split_once(' ') {
            Some((d @ (">" | "<"), line)) => Ok(TranscriptLine {
                direction: d.into(),
                line: line.into(),
            }),
            _ => Err(BackendError::Protocol(format!(
                "transcript line {} has no direction marker",
                n + 1
            ))),
        })
        .collect()
}

fn probe_context() -> TimeSeries {
    TimeSeries::from_rows(&[vec![1.0], vec![2.5], vec![4.0], vec![3.25]]).expect("valid probe context")
}

fn expect_bad_request(name: &str, reply: Result<serde_json::Value, BackendError>) -> Check {
    match reply {
        Ok(v) => {
            let code = v.pointer("/error/code").and_then(|c| c.as_str()).unwrap_or("");
            Check::new(name, code == CODE_BAD_REQUEST, format!("reply {v}"))
        }
        Err(e) => Check::new(name, false, e.to_string()),
    }
}

/// Runs the fixed probe sequence: two forecasts, a reconstruction, three
/// malformed requests, and shutdown. Records the exchange and checks reply
/// shapes and error codes. Deterministic backends reproduce the same
/// transcript on every run.
pub fn probe_session(backend: &ExternalBackend) -> (Vec<Check>, Vec<TranscriptLine>) {
    backend.record_transcript();
    let desc = backend.descriptor().clone();
    let ctx = probe_context();
    let mut checks = vec![Check::new(
        "handshake",
        true,
        format!("{} (proto {})", desc.name, backend.hello().proto),
    )];

    for (name, horizon, n, temperature, seed) in [
        ("forecast_shape", 3, 2, 0.5, 7),
        ("forecast_shape_single_step", 1, 3, 0.25, 8),
    ] {
        let req = ForecastRequest::new(ctx.clone(), horizon, n)
            .with_decode(temperature, 1.0)
            .with_seed(seed);
        let check = match backend.sample(&req) {
            Ok(s) => {
                let ok = s.len() == n && s.iter().all(|f| f.shape() == (horizon, desc.d_out.min(ctx.channels())));
                Check::new(
                    name,
                    ok,
                    format!("{} samples, first shape {:?}", s.len(), s.first().map(|f| f.shape())),
                )
            }
            Err(e) => Check::new(name, false, e.to_string()),
        };
        checks.push(check);
    }

    let check = match (backend.reconstruct_context(&ctx, 0.5, 9), desc.supports_reconstruction) {
        (Ok(r), true) => Check::new(
            "reconstruct",
            r.len() == ctx.len() && r.channels() == ctx.channels(),
            format!("length {}", r.len()),
        ),
        (Err(BackendError::Capability(m)), false) => {
            Check::new("reconstruct", true, format!("capability error as declared: {m}"))
        }
        (Ok(_), false) => Check::new(
            "reconstruct",
            false,
            "reconstruction succeeded but hello declares it unsupported",
        ),
        (Err(e), _) => Check::new("reconstruct", false, e.to_string()),
    };
    checks.push(check);

    checks.push(expect_bad_request(
        "malformed_json",
        backend.exchange_raw("this is not json"),
    ));
    checks.push(expect_bad_request(
        "schema_mismatch",
        backend.exchange_raw(r#"{"id":41,"op":"forecast"}"#),
    ));
    let zero = ForecastRequest::new(ctx, 0, 1);
    let check = match backend.sample(&zero) {
        Err(BackendError::Remote { code, .. }) => {
            Check::new("zero_horizon", code == CODE_BAD_REQUEST, format!("code {code}"))
        }
        Err(e) => Check::new("zero_horizon", false, e.to_string()),
        Ok(_) => Check::new("zero_horizon", false, "zero-horizon request was accepted"),
    };
    checks.push(check);

    backend.shutdown();
    (checks, backend.transcript())
}

/// Sample variance across candidates must not decrease as temperature grows.
pub fn temperature_check(backend: &dyn Forecaster) -> Check {
    if !backend.descriptor().supports_temperature {
        return Check::new("temperature_monotone", true, "skipped: temperature unsupported");
    }
    let ctx = probe_context();
    let mut spreads = Vec::new();
    for (k, t) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let req = ForecastRequest::new(ctx.clone(), 4, 16)
            .with_decode(t, 1.0)
            .with_seed(100 + k as u64);
        match backend.sample(&req) {
            Ok(s) => {
                let width = s[0].flat().len();
                let spread = (0..width)
                    .map(|e| {
                        let col: Vec<f64> = s.iter().map(|f| f.flat()[e]).collect();
                        let m = col.iter().sum::<f64>() / col.len() as f64;
                        col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64
                    })
                    .sum::<f64>()
                    / width as f64;
                spreads.push(spread);
            }
            Err(e) => return Check::new("temperature_monotone", false, e.to_string()),
        }
    }
    let ok = spreads.windows(2).all(|w| w[1] >= w[0]);
    Check::new(
        "temperature_monotone",
        ok,
        format!("variance by temperature {spreads:?}"),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub step: usize,
    pub expected: String,
    pub got: String,
}

/// Replays the parent-side lines of `transcript` against a freshly spawned
/// backend and compares every reply byte for byte.
pub fn replay(
    command: &[String],
    transcript: &[TranscriptLine],
    timeout: Duration,
) -> Result<Vec<Mismatch>, BackendError> {
    let backend = spawn_external(command, timeout)?;
    backend.set_request_timeout(Some(timeout));
    let mut mismatches = Vec::new();
    let mut lines = transcript.iter().enumerate().peekable();
    match lines.next() {
        Some((_, first)) if first.direction == "<" => {
            if first.line != backend.hello_line() {
                mismatches.push(Mismatch {
                    step: 0,
                    expected: first.line.clone(),
                    got: backend.hello_line().to_owned(),
                });
            }
        }
        _ => {
            return Err(BackendError::Protocol(
                "transcript must start with the hello line".into(),
            ))
        }
    }
    let shutdown = protocol::to_line(&protocol::Control::Shutdown);
    while let Some((step, sent)) = lines.next() {
        if sent.direction != ">" {
            return Err(BackendError::Protocol(format!("unexpected reply line at step {step}")));
        }
        if sent.line == shutdown {
            break;
        }
        let got = backend.exchange_line(&sent.line)?;
        match lines.next() {
            Some((step, expected)) if expected.direction == "<" => {
                if expected.line != got {
                    mismatches.push(Mismatch {
                        step,
                        expected: expected.line.clone(),
                        got,
                    });
                }
            }
            _ => {
                return Err(BackendError::Protocol(format!(
                    "request at step {step} has no recorded reply"
                )))
            }
        }
    }
    backend.shutdown();
    Ok(mismatches)
}
