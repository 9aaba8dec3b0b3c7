//! Latency overhead of a live session on a benchmark workload.
//!
//! The workload prints one `latency_ms <float>` line per request on stdout;
//! other lines are ignored. Repetitions alternate between plain and
//! instrumented runs so drift affects both sides alike.

use std::fmt;
use std::io;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::{self, JoinHandle};

use kprism_collector::{
    CollectError, LiveBackend, LossyPolicy, ProcFs, Session, SessionConfig, SessionReport,
    SystemClock, Target,
};
use thiserror::Error;

pub const LATENCY_PREFIX: &str = "latency_ms";

/// Upper bound on an instrumented run; the session is stopped when the
/// workload exits.
const MAX_SESSION_S: u64 = 24 * 3600;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repetitions must be at least 1")]
    NoReps,
    #[error("empty workload command")]
    EmptyCommand,
    #[error("workload printed no `{LATENCY_PREFIX}` lines")]
    NoLatencies,
    #[error("malformed latency line {0:?}")]
    Malformed(String),
    #[error("workload failed: {0}")]
    Workload(String),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

pub fn parse_latencies(text: &str) -> Result<Vec<f64>, BenchError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix(LATENCY_PREFIX) else {
            continue;
        };
        let v: f64 = rest
            .trim()
            .parse()
            .map_err(|_| BenchError::Malformed(line.to_string()))?;
        if !v.is_finite() || v < 0.0 || !rest.starts_with(char::is_whitespace) {
            return Err(BenchError::Malformed(line.to_string()));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(BenchError::NoLatencies);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stdev: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stdev = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Stats { n, mean, stdev }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadSummary {
    pub baseline: Stats,
    pub instrumented: Stats,
}

impl OverheadSummary {
    pub fn delta_ms(&self) -> f64 {
        self.instrumented.mean - self.baseline.mean
    }
}

impl fmt::Display for OverheadSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, s) in [
            ("baseline", self.baseline),
            ("instrumented", self.instrumented),
        ] {
            writeln!(
                f,
                "{name:<13} mean {:.4} ms  stdev {:.4} ms  n={}",
                s.mean, s.stdev, s.n
            )?;
        }
        write!(f, "{:<13} {:+.4} ms", "delta", self.delta_ms())
    }
}

/// Attaches monitoring to a running workload.
pub trait Instrumenter {
    fn attach(&mut self, child_pid: u32) -> Result<(), BenchError>;
    fn detach(&mut self) -> Result<(), BenchError>;
}

/// Runs both sides uninstrumented; used to measure the harness itself.
#[derive(Debug, Default)]
pub struct NoInstrumentation;

impl Instrumenter for NoInstrumentation {
    fn attach(&mut self, _: u32) -> Result<(), BenchError> {
        Ok(())
    }

    fn detach(&mut self) -> Result<(), BenchError> {
        Ok(())
    }
}

type Running = (
    Arc<AtomicBool>,
    JoinHandle<Result<SessionReport, CollectError>>,
);

/// A live recording session on the pinned probes, discarding its output.
#[derive(Debug)]
pub struct LiveInstrumenter {
    /// Target the spawned process itself rather than its command name.
    pub tgid_from_child: bool,
    pub comm: String,
    running: Option<Running>,
}

impl LiveInstrumenter {
    pub fn new(comm: &str, tgid_from_child: bool) -> Self {
        Self {
            tgid_from_child,
            comm: comm.to_string(),
            running: None,
        }
    }
}

impl Instrumenter for LiveInstrumenter {
    fn attach(&mut self, child_pid: u32) -> Result<(), BenchError> {
        let cfg = SessionConfig {
            target: if self.tgid_from_child {
                Target::Tgid(child_pid)
            } else {
                Target::Comm(self.comm.clone())
            },
            duration_s: MAX_SESSION_S,
            output_path: "/dev/null".into(),
            lossy_policy: LossyPolicy::Mark,
        };
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let (ready_tx, ready_rx) = mpsc::channel();
        let handle = thread::spawn(move || {
            let started = Session::start(
                cfg,
                &ProcFs::default(),
                LiveBackend::from_env(),
                SystemClock::default(),
            );
            match started {
                Ok(session) => {
                    let _ = ready_tx.send(Ok(()));
                    session.run_until(io::sink(), &flag)
                }
                Err(e) => {
                    let msg = e.to_string();
                    let _ = ready_tx.send(Err(e));
                    Err(CollectError::Backend(msg))
                }
            }
        });
        match ready_rx.recv() {
            Ok(Ok(())) => {
                self.running = Some((stop, handle));
                Ok(())
            }
            Ok(Err(e)) => {
                let _ = handle.join();
                Err(e.into())
            }
            Err(_) => Err(BenchError::Workload("session thread exited".into())),
        }
    }

    fn detach(&mut self) -> Result<(), BenchError> {
        let Some((stop, handle)) = self.running.take() else {
            return Ok(());
        };
        stop.store(true, Ordering::Relaxed);
        let report = handle
            .join()
            .map_err(|_| BenchError::Workload("session thread panicked".into()))??;
        log::info!("instrumented run: {} intervals", report.intervals);
        Ok(())
    }
}

fn run_once(argv: &[&str], inst: Option<&mut dyn Instrumenter>) -> Result<Vec<f64>, BenchError> {
    let mut child = Command::new(argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .spawn()?;
    let attached = match inst {
        Some(inst) => match inst.attach(child.id()) {
            Ok(()) => Some(inst),
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(e);
            }
        },
        None => None,
    };
    let output = child.wait_with_output();
    if let Some(inst) = attached {
        inst.detach()?;
    }
    let output = output?;
    if !output.status.success() {
        return Err(BenchError::Workload(format!(
            "{} exited with {}",
            argv[0], output.status
        )));
    }
    parse_latencies(&String::from_utf8_lossy(&output.stdout))
}

/// Runs `cmd` (split on whitespace, no shell) `reps` times each way.
pub fn bench_overhead(
    cmd: &str,
    reps: u32,
    inst: &mut dyn Instrumenter,
) -> Result<OverheadSummary, BenchError> {
    if reps == 0 {
        return Err(BenchError::NoReps);
    }
    let argv: Vec<&str> = cmd.split_whitespace().collect();
    if argv.is_empty() {
        return Err(BenchError::EmptyCommand);
    }
    let mut plain = Vec::new();
    let mut instrumented = Vec::new();
    for rep in 0..reps {
        let order = if rep % 2 == 0 {
            [false, true]
        } else {
            [true, false]
        };
        for with in order {
            if with {
                instrumented.extend(run_once(&argv, Some(&mut *inst))?);
            } else {
                plain.extend(run_once(&argv, None)?);
            }
        }
        log::debug!("repetition {} of {reps} done", rep + 1);
    }
    Ok(OverheadSummary {
        baseline: Stats::of(&plain),
        instrumented: Stats::of(&instrumented),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_lines() {
        let text = "warming up\nlatency_ms 0.25\n  latency_ms 1e-1\nlatency_msx 3\ndone\n";
        assert!(matches!(
            parse_latencies(text),
            Err(BenchError::Malformed(_))
        ));
        let text = "warming up\nlatency_ms 0.25\n  latency_ms 1e-1\ndone\n";
        assert_eq!(parse_latencies(text).unwrap(), vec![0.25, 0.1]);
        assert!(matches!(
            parse_latencies("ok\n"),
            Err(BenchError::NoLatencies)
        ));
        assert!(matches!(
            parse_latencies("latency_ms -1\n"),
            Err(BenchError::Malformed(_))
        ));
        assert!(matches!(
            parse_latencies("latency_ms fast\n"),
            Err(BenchError::Malformed(_))
        ));
    }

    #[test]
    fn stats() {
        let s = Stats::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.n, 4);
        assert!((s.mean - 2.5).abs() < 1e-12);
        assert!((s.stdev - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stats::of(&[7.0]).stdev, 0.0);
    }

    #[test]
    fn zero_reps_rejected() {
        assert!(matches!(
            bench_overhead("true", 0, &mut NoInstrumentation),
            Err(BenchError::NoReps)
        ));
    }
}
