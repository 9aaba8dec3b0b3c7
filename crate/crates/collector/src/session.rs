use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use kprism_core::{
    sort_samples, Bri, MetricSample, Resource, SocketEndpoint, StoreWriter, ThreadRef,
};

use crate::backend::{AttachReport, ProbeBackend, Summary};
use crate::config::{LossyPolicy, SessionConfig};
use crate::procfs::{resolve_target, ProcessTable};
use crate::scope::{ScopeEntry, ScopeState};
use crate::wire::{class_metrics, DiscoveryRecord, WireKey, WireValue};
use crate::CollectError;

/// Intervals queued for the writer before the reader blocks.
const WRITE_QUEUE: usize = 4;

pub trait Clock {
    /// Time since an arbitrary fixed origin; never goes backwards.
    fn monotonic(&self) -> Duration;
    fn wall_s(&self) -> u64;
    fn sleep_until(&self, deadline: Duration);
}

impl<C: Clock + ?Sized> Clock for &C {
    fn monotonic(&self) -> Duration {
        (**self).monotonic()
    }

    fn wall_s(&self) -> u64 {
        (**self).wall_s()
    }

    fn sleep_until(&self, deadline: Duration) {
        (**self).sleep_until(deadline)
    }
}

#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn monotonic(&self) -> Duration {
        self.origin.elapsed()
    }

    fn wall_s(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.monotonic();
        if deadline > now {
            thread::sleep(deadline - now);
        }
    }
}

/// A clock that only moves when slept on.
#[derive(Debug)]
pub struct ManualClock {
    now: Cell<Duration>,
    wall_origin: u64,
}

impl ManualClock {
    pub fn new(wall_origin: u64) -> Self {
        Self {
            now: Cell::new(Duration::ZERO),
            wall_origin,
        }
    }

    pub fn advance(&self, by: Duration) {
        self.now.set(self.now.get() + by);
    }
}

impl Clock for ManualClock {
    fn monotonic(&self) -> Duration {
        self.now.get()
    }

    fn wall_s(&self) -> u64 {
        self.wall_origin + self.now.get().as_secs()
    }

    fn sleep_until(&self, deadline: Duration) {
        if deadline > self.now.get() {
            self.now.set(deadline);
        }
    }
}

/// One tick's output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interval {
    pub index: u64,
    pub wall_ts: u64,
    /// Sockets referenced for the first time by `samples`.
    pub endpoints: Vec<(Bri, SocketEndpoint)>,
    pub samples: Vec<MetricSample>,
    pub lossy: bool,
    pub dropped: u64,
    pub joined: Vec<ScopeEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionReport {
    pub intervals: u64,
    pub samples: usize,
    pub lossy_intervals: Vec<u64>,
    pub scope: Vec<ScopeEntry>,
    pub attach: AttachReport,
}

pub struct Session<B: ProbeBackend, C: Clock> {
    cfg: SessionConfig,
    backend: B,
    clock: C,
    scope: ScopeState,
    attach: AttachReport,
    prev: BTreeMap<WireKey, WireValue>,
    comms: BTreeMap<(u32, u32), String>,
    endpoints: BTreeMap<Bri, SocketEndpoint>,
    written: BTreeSet<Bri>,
    start_mono: Duration,
    start_wall: u64,
    next: u64,
}

impl<B: ProbeBackend, C: Clock> Session<B, C> {
    /// Resolves the target, attaches the probes and takes the baseline
    /// snapshot that the first interval is differenced against.
    pub fn start(
        cfg: SessionConfig,
        table: &dyn ProcessTable,
        mut backend: B,
        clock: C,
    ) -> Result<Self, CollectError> {
        cfg.validate()?;
        let initial = resolve_target(table, &cfg.target)?;
        let start_mono = clock.monotonic();
        let scope = ScopeState::new(&initial, start_mono.as_nanos() as u64);
        let attach = backend.attach(&initial)?;
        for probe in &attach.unavailable {
            log::warn!("optional probe {probe} unavailable");
        }
        let mut session = Session {
            cfg,
            backend,
            scope,
            attach,
            prev: BTreeMap::new(),
            comms: BTreeMap::new(),
            endpoints: BTreeMap::new(),
            written: BTreeSet::new(),
            start_mono,
            start_wall: clock.wall_s(),
            clock,
            next: 0,
        };
        let baseline = session.backend.read_summaries()?;
        for (k, v) in &baseline.entries {
            session.prev.insert(*k, *v);
        }
        session.discover(&baseline.discovery)?;
        log::info!(
            "session started: {} -> tgids {:?}",
            session.cfg.target,
            session.scope.members()
        );
        Ok(session)
    }

    pub fn scope(&self) -> &ScopeState {
        &self.scope
    }

    pub fn attach_report(&self) -> &AttachReport {
        &self.attach
    }

    fn discover(&mut self, records: &[DiscoveryRecord]) -> Result<Vec<ScopeEntry>, CollectError> {
        let mut joined = Vec::new();
        for rec in records {
            match rec {
                DiscoveryRecord::Comm {
                    tgid, tid, comm, ..
                } => {
                    self.comms.insert((*tgid, *tid), comm.clone());
                }
                DiscoveryRecord::Socket { bri, endpoint, .. } => {
                    self.endpoints.insert(*bri, endpoint.clone());
                }
                _ => {}
            }
            for entry in self.scope.observe(rec) {
                self.backend.add_scope_member(entry.tgid)?;
                log::info!("scope + tgid {} ({})", entry.tgid, entry.reason.as_str());
                joined.push(entry);
            }
        }
        Ok(joined)
    }

    fn difference(
        &mut self,
        iv: u64,
        summary: &Summary,
    ) -> Result<Vec<MetricSample>, CollectError> {
        let mut samples = Vec::new();
        for (key, now) in &summary.entries {
            let before = self.prev.get(key).copied().unwrap_or_default();
            if now.time_ns < before.time_ns || now.count < before.count {
                return Err(CollectError::Backend(format!(
                    "accumulator went backwards for tgid {} tid {} class {}",
                    key.tgid, key.tid, key.class
                )));
            }
            self.prev.insert(*key, *now);
            if !key.is_global_scope() && !self.scope.is_member(key.tgid) {
                continue;
            }
            let (time_metric, count_metric) = class_metrics(key.class)?;
            let resource = key.resource()?;
            let subject = ThreadRef {
                tgid: key.tgid,
                tid: key.tid,
                comm: self
                    .comms
                    .get(&(key.tgid, key.tid))
                    .cloned()
                    .unwrap_or_default(),
            };
            let deltas = [
                (time_metric, now.time_ns - before.time_ns),
                (count_metric, now.count - before.count),
            ];
            for (metric, delta) in deltas {
                let Some(metric) = metric else { continue };
                if delta == 0 {
                    continue;
                }
                let sample = MetricSample::new(iv, subject.clone(), metric, resource, delta)
                    .map_err(|e| CollectError::Backend(e.to_string()))?;
                samples.push(sample);
            }
        }
        sort_samples(&mut samples);
        Ok(samples)
    }

    fn new_endpoints(&mut self, samples: &[MetricSample]) -> Vec<(Bri, SocketEndpoint)> {
        let mut out = Vec::new();
        for s in samples {
            let bri = match s.resource {
                Some(Resource::Bri(b)) if b.kind().is_socket() => b,
                Some(Resource::EpollFile { file, .. }) if file.kind().is_socket() => file,
                _ => continue,
            };
            if let Some(ep) = self.endpoints.get(&bri) {
                if self.written.insert(bri) {
                    out.push((bri, ep.clone()));
                }
            }
        }
        out
    }

    /// Reads one summary and turns it into the next interval's samples.
    pub fn tick(&mut self) -> Result<Interval, CollectError> {
        let iv = self.next;
        let summary = self.backend.read_summaries()?;
        for rec in &summary.discovery {
            if let DiscoveryRecord::Comm {
                tgid, tid, comm, ..
            } = rec
            {
                self.comms.insert((*tgid, *tid), comm.clone());
            }
        }
        let samples = self.difference(iv, &summary)?;
        // New members are only accumulated from the next interval on, so
        // scope changes are applied after this interval's samples are cut.
        let joined = self.discover(&summary.discovery)?;
        let lossy = summary.dropped > 0;
        if lossy {
            log::warn!(
                "interval {iv}: {} discovery records dropped",
                summary.dropped
            );
            if self.cfg.lossy_policy == LossyPolicy::Abort {
                return Err(CollectError::Overflow {
                    interval: iv,
                    dropped: summary.dropped,
                });
            }
        }
        self.next += 1;
        Ok(Interval {
            index: iv,
            wall_ts: self.start_wall + iv,
            endpoints: self.new_endpoints(&samples),
            samples,
            lossy,
            dropped: summary.dropped,
            joined,
        })
    }

    /// Runs every interval of the session, writing to the configured output.
    pub fn run(self) -> Result<SessionReport, CollectError> {
        let file = File::create(&self.cfg.output_path)?;
        self.run_to(BufWriter::new(file))
    }

    /// Runs every interval, persisting through a writer thread. On error the
    /// intervals already produced are written out before returning.
    pub fn run_to<W: Write + Send + 'static>(self, out: W) -> Result<SessionReport, CollectError> {
        self.run_until(out, &AtomicBool::new(false))
    }

    /// Like [`Session::run_to`], but ends early at the first tick after
    /// `stop` is set.
    pub fn run_until<W: Write + Send + 'static>(
        mut self,
        out: W,
        stop: &AtomicBool,
    ) -> Result<SessionReport, CollectError> {
        let (tx, rx) = sync_channel::<Interval>(WRITE_QUEUE);
        let writer = thread::spawn(move || -> std::io::Result<()> {
            let mut store = StoreWriter::new(out);
            for iv in rx {
                store.write_interval(&iv.endpoints, &iv.samples, iv.wall_ts, iv.lossy)?;
                store.flush()?;
            }
            store.flush()
        });

        let mut report = SessionReport {
            intervals: 0,
            samples: 0,
            lossy_intervals: Vec::new(),
            scope: Vec::new(),
            attach: self.attach.clone(),
        };
        let mut failure = None;
        for k in 0..self.cfg.duration_s {
            self.clock
                .sleep_until(self.start_mono + Duration::from_secs(k + 1));
            if stop.load(Ordering::Relaxed) {
                break;
            }
            match self.tick() {
                Ok(iv) => {
                    report.intervals += 1;
                    report.samples += iv.samples.len();
                    if iv.lossy {
                        report.lossy_intervals.push(iv.index);
                    }
                    if tx.send(iv).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    log::error!("session aborted at interval {k}: {e}");
                    failure = Some(e);
                    break;
                }
            }
        }
        drop(tx);
        let written = writer
            .join()
            .map_err(|_| CollectError::Backend("writer thread panicked".into()))?;
        if let Some(e) = failure {
            return Err(e);
        }
        written?;
        report.scope = self.scope.discovery_log().to_vec();
        Ok(report)
    }
}
