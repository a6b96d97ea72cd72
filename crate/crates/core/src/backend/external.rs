//! Client side of the wire protocol: a pool of child processes, one in-flight
//! request per process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::protocol::{self, Control, Hello, Op, Reply, Request, PROTOCOL_VERSION};
use super::{BackendDescriptor, BackendError, ForecastRequest, Forecaster};
use crate::types::{Forecast, TimeSeries};

/// One line of a recorded exchange. `direction` is `">"` for parent to child
/// and `"<"` for child to parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub direction: String,
    pub line: String,
}

impl std::fmt::Display for TranscriptLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.direction, self.line)
    }
}

struct ChildProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    transcript: Option<Vec<TranscriptLine>>,
    request_timeout: Option<Duration>,
}

impl ChildProcess {
    fn spawn(command: &[String], handshake_timeout: Duration) -> Result<(Self, Hello, String), BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::Spawn("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Spawn(format!("{program}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut proc = ChildProcess {
            child,
            stdin,
            lines: rx,
            next_id: 1,
            transcript: None,
            request_timeout: None,
        };
        let hello_line = match proc.lines.recv_timeout(handshake_timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(BackendError::Protocol(format!("reading hello: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                proc.kill();
                return Err(BackendError::HandshakeTimeout(handshake_timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(BackendError::Spawn("backend exited before sending hello".into()))
            }
        };
        let value: serde_json::Value =
            serde_json::from_str(&hello_line).map_err(|e| BackendError::Protocol(format!("hello is not JSON: {e}")))?;
        let got = value.get("proto").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
        if got != PROTOCOL_VERSION {
            proc.kill();
            return Err(BackendError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                got,
            });
        }
        let hello: Hello =
            serde_json::from_value(value).map_err(|e| BackendError::Protocol(format!("malformed hello: {e}")))?;
        if hello.max_context == 0 || hello.d_out == 0 {
            return Err(BackendError::Protocol(
                "hello declares max_context or d_out of 0".into(),
            ));
        }
        Ok((proc, hello, hello_line))
    }

    fn record(&mut self, direction: &str, line: &str) {
        if let Some(t) = self.transcript.as_mut() {
            t.push(TranscriptLine {
                direction: direction.into(),
                line: line.into(),
            });
        }
    }

    fn write_line(&mut self, line: &str, request_id: u64) -> Result<(), BackendError> {
        self.record(">", line);
        let stdin = self.stdin.as_mut().ok_or_else(|| BackendError::Transport {
            request_id,
            message: "stdin already closed".into(),
        })?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| BackendError::Transport {
                request_id,
                message: format!("write failed: {e}"),
            })
    }

    fn read_line(&mut self, request_id: u64) -> Result<String, BackendError> {
        let received = match self.request_timeout {
            Some(t) => self.lines.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => format!("no response within {t:?}"),
                RecvTimeoutError::Disconnected => self.exit_message(),
            }),
            None => self.lines.recv().map_err(|_| self.exit_message()),
        };
        match received {
            Ok(Ok(line)) => {
                self.record("<", &line);
                Ok(line)
            }
            Ok(Err(e)) => Err(BackendError::Transport {
                request_id,
                message: format!("read failed: {e}"),
            }),
            Err(message) => Err(BackendError::Transport { request_id, message }),
        }
    }

    fn exit_message(&mut self) -> String {
        match self.child.wait() {
            Ok(status) => format!("backend exited ({status})"),
            Err(e) => format!("backend exited: {e}"),
        }
    }

    /// Sends an arbitrary line and returns the reply line verbatim.
    fn exchange_line(&mut self, line: &str) -> Result<String, BackendError> {
        let id = serde_json::from_str::<serde_json::Value>(line)
            .ok()
            .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64))
            .unwrap_or(0);
        self.write_line(line, id)?;
        self.read_line(id)
    }

    fn call(&mut self, mut request: Request) -> Result<Vec<Vec<Vec<f64>>>, BackendError> {
        let id = self.next_id;
        self.next_id += 1;
        request.id = id;
        self.write_line(&protocol::to_line(&request), id)?;
        let line = self.read_line(id)?;
        let reply: Reply = serde_json::from_str(&line)
            .map_err(|e| BackendError::Protocol(format!("malformed reply to request {id}: {e}")))?;
        if reply.id() != id {
            return Err(BackendError::Protocol(format!(
                "reply id {} does not match request id {id}",
                reply.id()
            )));
        }
        match reply {
            Reply::Samples { samples, .. } => Ok(samples),
            Reply::Error { error, .. } if error.code == protocol::CODE_CAPABILITY => {
                Err(BackendError::Capability(error.message))
            }
            Reply::Error { error, .. } => Err(BackendError::Remote {
                id,
                code: error.code,
                message: error.message,
            }),
        }
    }

    fn shutdown(&mut self) {
        if self.stdin.is_some() {
            let _ = self.write_line(&protocol::to_line(&Control::Shutdown), 0);
            self.stdin = None;
        }
        for _ in 0..50 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        self.kill();
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A forecaster hosted by one or more identical child processes.
pub struct ExternalBackend {
    descriptor: BackendDescriptor,
    hello: Hello,
    hello_line: String,
    procs: Vec<Mutex<ChildProcess>>,
    next: AtomicUsize,
}

/// Starts one child process and performs the handshake.
pub fn spawn_external(command: &[String], handshake_timeout: Duration) -> Result<ExternalBackend, BackendError> {
    spawn_external_pool(command, 1, handshake_timeout)
}

/// Starts `count` identical child processes. All must report the same hello.
pub fn spawn_external_pool(
    command: &[String],
    count: usize,
    handshake_timeout: Duration,
) -> Result<ExternalBackend, BackendError> {
    let mut procs = Vec::with_capacity(count.max(1));
    let mut hello: Option<Hello> = None;
    let mut hello_line = String::new();
    for _ in 0..count.max(1) {
        let (proc, h, line) = ChildProcess::spawn(command, handshake_timeout)?;
        if hello.is_none() {
            hello_line = line;
        }
        if let Some(first) = &hello {
            if first != &h {
                return Err(BackendError::Protocol("pool members disagree on capabilities".into()));
            }
        }
        hello = Some(h);
        procs.push(Mutex::new(proc));
    }
    let hello = hello.expect("at least one process");
    Ok(ExternalBackend {
        descriptor: hello.descriptor(),
        hello,
        hello_line,
        procs,
        next: AtomicUsize::new(0),
    })
}

impl ExternalBackend {
    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    pub fn process_count(&self) -> usize {
        self.procs.len()
    }

    fn acquire(&self) -> MutexGuard<'_, ChildProcess> {
        for proc in &self.procs {
            if let Ok(guard) = proc.try_lock() {
                return guard;
            }
        }
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.procs.len();
        self.procs[i].lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Starts recording every line exchanged with the first process.
    pub fn record_transcript(&self) {
        self.procs[0].lock().unwrap_or_else(|e| e.into_inner()).transcript = Some(Vec::new());
    }

    /// Recorded lines of the first process, including the hello.
    pub fn transcript(&self) -> Vec<TranscriptLine> {
        let proc = self.procs[0].lock().unwrap_or_else(|e| e.into_inner());
        let mut lines = vec![TranscriptLine {
            direction: "<".into(),
            line: self.hello_line.clone(),
        }];
        lines.extend(proc.transcript.clone().unwrap_or_default());
        lines
    }

    pub fn set_request_timeout(&self, timeout: Option<Duration>) {
        for p in &self.procs {
            p.lock().unwrap_or_else(|e| e.into_inner()).request_timeout = timeout;
        }
    }

    /// Sends a raw line on the first process and returns the parsed reply.
    /// Used by conformance probes that deliberately send invalid requests.
    pub fn exchange_raw(&self, line: &str) -> Result<serde_json::Value, BackendError> {
        let reply = self.exchange_line(line)?;
        serde_json::from_str(&reply).map_err(|e| BackendError::Protocol(format!("reply is not JSON: {e}")))
    }

    /// Like [`exchange_raw`](Self::exchange_raw) but returns the reply text unparsed.
    pub fn exchange_line(&self, line: &str) -> Result<String, BackendError> {
        self.procs[0]
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .exchange_line(line)
    }

    /// The hello line exactly as the first process sent it.
    pub fn hello_line(&self) -> &str {
        &self.hello_line
    }

    /// Sends `shutdown` to every process and waits for them to exit.
    pub fn shutdown(&self) {
        for p in &self.procs {
            p.lock().unwrap_or_else(|e| e.into_inner()).shutdown();
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn request(
        &self,
        op: Op,
        context: &TimeSeries,
        horizon: usize,
        num_samples: usize,
        temperature: f64,
        top_p: f64,
        seed: u64,
    ) -> Request {
        Request {
            id: 0,
            op,
            context: context.rows(),
            horizon,
            num_samples,
            temperature,
            top_p,
            seed,
        }
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn to_forecast(sample: Vec<Vec<f64>>, index: usize) -> Result<Forecast, BackendError> {
    let channels = sample.first().map(Vec::len).unwrap_or(0);
    if sample.iter().any(|r| r.len() != channels) {
        return Err(BackendError::Output(format!("sample {index} has ragged rows")));
    }
    Forecast::from_flat(sample.concat(), channels).map_err(|e| BackendError::Output(format!("sample {index}: {e}")))
}

impl Forecaster for ExternalBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn sample(&self, req: &ForecastRequest) -> Result<Vec<Forecast>, BackendError> {
        let request = self.request(
            Op::Forecast,
            &req.context,
            req.horizon,
            req.num_samples,
            req.temperature,
            req.top_p,
            req.seed,
        );
        let samples = self.acquire().call(request)?;
        samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| to_forecast(s, i))
            .collect()
    }

    fn reconstruct_context(
        &self,
        context: &TimeSeries,
        temperature: f64,
        seed: u64,
    ) -> Result<TimeSeries, BackendError> {
        let request = self.request(Op::Reconstruct, context, context.len(), 1, temperature, 1.0, seed);
        let mut samples = self.acquire().call(request)?;
        if samples.len() != 1 {
            return Err(BackendError::Output(format!(
                "reconstruct returned {} samples",
                samples.len()
            )));
        }
        let rows = samples.remove(0);
        TimeSeries::from_rows(&rows)
            .map(|s| s.with_meta_of(context))
            .map_err(|e| BackendError::Output(e.to_string()))
    }
}
