//! A deterministic echo forecaster speaking the wire protocol, used for
//! conformance tests of the client. Sample `i` repeats the last observed
//! value of each channel, shifted by `temperature * i`; reconstruction echoes
//! the context.

use std::io::{self, BufRead, Write};

use super::protocol::{self, Hello, Reply, CODE_BAD_REQUEST, CODE_CAPABILITY, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct MockOptions {
    pub proto: u32,
    pub supports_reconstruction: bool,
    pub max_context: usize,
    pub d_out: usize,
    /// Exit without replying once this many requests have been received.
    pub crash_after: Option<usize>,
    /// Never send the hello line.
    pub silent: bool,
}

impl Default for MockOptions {
    fn default() -> Self {
        Self {
            proto: PROTOCOL_VERSION,
            supports_reconstruction: true,
            max_context: 4096,
            d_out: 1,
            crash_after: None,
            silent: false,
        }
    }
}

impl MockOptions {
    /// Parses `--proto N`, `--no-reconstruct`, `--crash-after N`, `--silent`,
    /// `--max-context N`, `--d-out N`.
    pub fn from_args<I: IntoIterator<Item = String>>(args: I) -> Result<Self, String> {
        let mut opts = Self::default();
        let mut it = args.into_iter();
        while let Some(arg) = it.next() {
            let mut value = |name: &str| -> Result<usize, String> {
                it.next()
                    .ok_or_else(|| format!("{name} needs a value"))?
                    .parse()
                    .map_err(|e| format!("{name}: {e}"))
            };
            match arg.as_str() {
                "--proto" => opts.proto = value("--proto")? as u32,
                "--crash-after" => opts.crash_after = Some(value("--crash-after")?),
                "--max-context" => opts.max_context = value("--max-context")?,
                "--d-out" => opts.d_out = value("--d-out")?,
                "--no-reconstruct" => opts.supports_reconstruction = false,
                "--silent" => opts.silent = true,
                other => return Err(format!("unknown argument {other}")),
            }
        }
        Ok(opts)
    }

    pub fn hello(&self) -> Hello {
        Hello {
            proto: self.proto,
            name: "mock-echo".into(),
            supports_temperature: true,
            supports_top_p: true,
            supports_reconstruction: self.supports_reconstruction,
            max_context: self.max_context,
            d_out: self.d_out,
            deterministic: Some(true),
        }
    }
}

/// How the serve loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockExit {
    Shutdown,
    Eof,
    Crashed,
}

/// Runs the request loop until shutdown, EOF, or the configured crash point.
pub fn serve<R: BufRead, W: Write>(opts: &MockOptions, input: R, mut output: W) -> io::Result<MockExit> {
    if opts.silent {
        // Hold the pipe open without speaking until the parent gives up.
        for line in input.lines() {
            line?;
        }
        return Ok(MockExit::Eof);
    }
    writeln!(output, "{}", protocol::to_line(&opts.hello()))?;
    output.flush()?;
    let mut received = 0usize;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(_) => {
                reply(&mut output, &Reply::error(0, CODE_BAD_REQUEST, "malformed JSON"))?;
                continue;
            }
        };
        if value.get("op").and_then(|v| v.as_str()) == Some("shutdown") {
            return Ok(MockExit::Shutdown);
        }
        received += 1;
        if opts.crash_after.is_some_and(|n| received > n) {
            return Ok(MockExit::Crashed);
        }
        let answer = handle(opts, &value);
        reply(&mut output, &answer)?;
    }
    Ok(MockExit::Eof)
}

fn reply<W: Write>(output: &mut W, r: &Reply) -> io::Result<()> {
    writeln!(output, "{}", protocol::to_line(r))?;
    output.flush()
}

fn handle(opts: &MockOptions, value: &serde_json::Value) -> Reply {
    let id = value.get("id").and_then(|v| v.as_u64()).unwrap_or(0);
    let request: protocol::Request = match serde_json::from_value(value.clone()) {
        Ok(r) => r,
        Err(_) => return Reply::error(id, CODE_BAD_REQUEST, "request does not match the schema"),
    };
    let width = request.context.first().map(Vec::len).unwrap_or(0);
    if width == 0 || request.context.iter().any(|r| r.len() != width) {
        return Reply::error(id, CODE_BAD_REQUEST, "context must be a non-empty rectangular matrix");
    }
    if request.context.len() > opts.max_context {
        return Reply::error(id, CODE_BAD_REQUEST, "context exceeds max_context");
    }
    match request.op {
        protocol::Op::Forecast => {
            if request.horizon == 0 || request.num_samples == 0 {
                return Reply::error(id, CODE_BAD_REQUEST, "horizon and num_samples must be >= 1");
            }
            let last = request.context.last().expect("non-empty context");
            let d_out = opts.d_out.min(width);
            let samples = (0..request.num_samples)
                .map(|i| {
                    let shift = request.temperature * i as f64;
                    vec![last[..d_out].iter().map(|v| v + shift).collect(); request.horizon]
                })
                .collect();
            Reply::Samples { id, samples }
        }
        protocol::Op::Reconstruct => {
            if !opts.supports_reconstruction {
                return Reply::error(id, CODE_CAPABILITY, "reconstruction not supported");
            }
            Reply::Samples {
                id,
                samples: vec![request.context],
            }
        }
    }
}
