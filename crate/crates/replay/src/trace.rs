//! Trace files: a header line followed by one [`RawEvent`] per line, in
//! global timestamp order.
//!
//! ```text
//! {"version":"v1","scenario":"lock_contention","seed":7,"threads":3,"duration_s":120,"epoch_wall_s":1700000000}
//! {"t":0,"tgid":1000,"tid":1000,"comm":"acceptor","ev":"sched_switch_in"}
//! ```

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::path::Path;

use kprism_core::{interval_of, RawEvent};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub threads: u32,
    /// Intervals `0..duration_s` are replayed.
    pub duration_s: u64,
    /// Wall-clock second of interval 0.
    pub epoch_wall_s: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<RawEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("trace is empty; expected a header line")]
    MissingHeader,
    #[error("unsupported trace version {0:?}")]
    Version(String),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

impl Trace {
    /// Checks ordering and bounds. Line numbers in errors count the header as
    /// line 1.
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.header.version != TRACE_VERSION {
            return Err(TraceError::Version(self.header.version.clone()));
        }
        let mut last: HashMap<(u32, u32), u64> = HashMap::new();
        for (i, ev) in self.events.iter().enumerate() {
            let line = i + 2;
            let invalid = |reason: String| TraceError::Invalid { line, reason };
            if ev.tgid == 0 || ev.tid == 0 {
                return Err(invalid("thread ids must be nonzero".into()));
            }
            ev.kind.validate().map_err(|r| invalid(r.into()))?;
            if interval_of(ev.t_ns) >= self.header.duration_s {
                return Err(invalid(format!(
                    "event at {} ns lies past the declared {} s",
                    ev.t_ns, self.header.duration_s
                )));
            }
            let prev = last.entry((ev.tgid, ev.tid)).or_insert(ev.t_ns);
            if ev.t_ns < *prev {
                return Err(invalid(format!(
                    "tid {} goes back in time: {} after {}",
                    ev.tid, ev.t_ns, prev
                )));
            }
            *prev = ev.t_ns;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut lines = input.lines().enumerate();
        let header = loop {
            let Some((i, line)) = lines.next() else {
                return Err(TraceError::MissingHeader);
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let header: TraceHeader =
                serde_json::from_str(&line).map_err(|source| TraceError::Parse {
                    line: i + 1,
                    source,
                })?;
            break header;
        };
        if header.version != TRACE_VERSION {
            return Err(TraceError::Version(header.version));
        }
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(
                serde_json::from_str(&line).map_err(|source| TraceError::Parse {
                    line: i + 1,
                    source,
                })?,
            );
        }
        let trace = Trace { header, events };
        trace.validate()?;
        Ok(trace)
    }

    pub fn open(path: &Path) -> Result<Self, TraceError> {
        Self::read(io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for ev in &self.events {
            serde_json::to_writer(&mut out, ev)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}
