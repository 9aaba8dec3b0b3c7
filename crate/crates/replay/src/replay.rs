use std::io::{self, Write};

use kprism_core::{interval_of, Counters, Engine, EngineError, MetricSample, StoreWriter};
use thiserror::Error;

use crate::trace::{Trace, TraceError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("line {line}: {source}")]
    Engine {
        line: usize,
        #[source]
        source: EngineError,
    },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub intervals: u64,
    pub samples: usize,
    pub counters: Counters,
}

/// Feeds the trace through the engine, one flush per declared interval, and
/// hands every flushed interval to `sink` together with newly seen endpoints.
pub fn replay_with<F>(trace: &Trace, mut sink: F) -> Result<ReplaySummary, ReplayError>
where
    F: FnMut(
        &[(kprism_core::Bri, kprism_core::SocketEndpoint)],
        &[MetricSample],
        u64,
    ) -> io::Result<()>,
{
    trace.validate()?;
    let mut engine = Engine::new(0);
    let mut summary = ReplaySummary::default();
    let mut flush = |engine: &mut Engine, iv: u64, summary: &mut ReplaySummary| {
        let samples = engine
            .flush_interval(iv)
            .map_err(|source| ReplayError::Engine { line: 0, source })?;
        let endpoints = engine.take_new_endpoints();
        summary.intervals += 1;
        summary.samples += samples.len();
        sink(&endpoints, &samples, iv)?;
        Ok::<_, ReplayError>(())
    };
    for (i, ev) in trace.events.iter().enumerate() {
        while interval_of(ev.t_ns) > engine.open_interval() {
            let iv = engine.open_interval();
            flush(&mut engine, iv, &mut summary)?;
        }
        engine.ingest(ev).map_err(|source| ReplayError::Engine {
            line: i + 2,
            source,
        })?;
    }
    while engine.open_interval() < trace.header.duration_s {
        let iv = engine.open_interval();
        flush(&mut engine, iv, &mut summary)?;
    }
    summary.counters = engine.counters().clone();
    Ok(summary)
}

/// Replays into memory.
pub fn replay(trace: &Trace) -> Result<(Vec<MetricSample>, ReplaySummary), ReplayError> {
    let mut all = Vec::new();
    let summary = replay_with(trace, |_, samples, _| {
        all.extend_from_slice(samples);
        Ok(())
    })?;
    Ok((all, summary))
}

/// Replays into the metric store format. Interval `k` gets wall timestamp
/// `epoch_wall_s + k`.
pub fn replay_to_store<W: Write>(trace: &Trace, out: W) -> Result<ReplaySummary, ReplayError> {
    let mut writer = StoreWriter::new(out);
    let epoch = trace.header.epoch_wall_s;
    let summary = replay_with(trace, |endpoints, samples, iv| {
        writer.write_interval(endpoints, samples, epoch + iv, false)
    })?;
    writer.flush()?;
    Ok(summary)
}
