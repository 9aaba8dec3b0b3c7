//! The aggregation engine: a single-writer state machine that folds a
//! time-ordered stream of [`RawEvent`]s into per-second [`MetricSample`]s.
//!
//! Time is attributed span by span. A span is the stretch between two events
//! during which a thread was in one scheduler state, or blocked in one call.
//! Spans still open when an interval is flushed are cut at the boundary, so
//! every fragment lands in the interval it belongs to. Wait counts are bumped
//! only when the call returns, in the interval of the return.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::event::{classify_futex_op, EventKind, FutexOpClass, RawEvent, TaskState};
use crate::ids::{Bri, BriKind, FutexRef, Resource, SocketEndpoint, ThreadRef};
use crate::metric::{interval_end, interval_start, MetricKind, MetricSample};

type ThreadKey = (u32, u32);
type AccKey = (ThreadKey, MetricKind, Option<Resource>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("event at t={t_ns} for tid {tid} rejected: {reason}")]
    InvalidEvent {
        t_ns: u64,
        tid: u32,
        reason: &'static str,
    },
    #[error("event at t={t_ns} lies past open interval {open}; flush first")]
    BeyondOpenInterval { t_ns: u64, open: u64 },
    #[error("interval {interval} was already flushed")]
    AlreadyFlushed { interval: u64 },
    #[error("cannot flush interval {requested} while interval {open} is still open")]
    IntervalSkipped { requested: u64, open: u64 },
}

/// Anomalies the engine tolerated instead of failing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// Events older than the previous event of the same thread.
    pub out_of_order: u64,
    /// Events timestamped inside an interval that was already flushed.
    pub late: u64,
    /// Exit events with no matching enter.
    pub unmatched_exits: u64,
    /// Calls that never returned: superseded by a new enter or ended by thread exit.
    pub abandoned_calls: u64,
    pub unknown_futex_ops: u64,
    pub unsupported_socket_family: u64,
    pub unregistered_epoll_removes: u64,
}

/// Scheduler state of one thread, with the time it was entered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchedState {
    #[default]
    Unknown,
    Running(u64),
    Runnable(u64),
    SleepInterruptible(u64),
    SleepUninterruptible {
        since: u64,
        iowait: bool,
    },
}

impl SchedState {
    fn with_since(self, t: u64) -> Self {
        match self {
            SchedState::Unknown => SchedState::Unknown,
            SchedState::Running(_) => SchedState::Running(t),
            SchedState::Runnable(_) => SchedState::Runnable(t),
            SchedState::SleepInterruptible(_) => SchedState::SleepInterruptible(t),
            SchedState::SleepUninterruptible { iowait, .. } => {
                SchedState::SleepUninterruptible { since: t, iowait }
            }
        }
    }
}

/// A blocking call in progress. `since` is the start of the part of the call
/// not yet attributed.
#[derive(Debug, Clone)]
struct PendingWait {
    since: u64,
    time_targets: Vec<(MetricKind, Resource)>,
    count_targets: Vec<(MetricKind, Resource)>,
}

#[derive(Debug, Clone)]
enum PendingFutex {
    Wait(PendingWait),
    Wake(FutexRef),
}

#[derive(Debug, Default)]
struct ThreadSlot {
    sched: SchedState,
    fifo: Option<PendingWait>,
    sock_recv: Option<PendingWait>,
    sock_send: Option<PendingWait>,
    futex: Option<PendingFutex>,
    poll: Option<PendingWait>,
    epoll: Option<PendingWait>,
}

#[derive(Debug, Default)]
struct Accumulators(BTreeMap<AccKey, u64>);

impl Accumulators {
    fn add(&mut self, thread: ThreadKey, kind: MetricKind, resource: Option<Resource>, v: u64) {
        if v == 0 {
            return;
        }
        let slot = self.0.entry((thread, kind, resource)).or_insert(0);
        *slot = slot.saturating_add(v);
    }

    fn close_wait(&mut self, thread: ThreadKey, wait: &PendingWait, until: u64, completed: bool) {
        let elapsed = until.saturating_sub(wait.since);
        for (kind, res) in &wait.time_targets {
            self.add(thread, *kind, Some(*res), elapsed);
        }
        if completed {
            for (kind, res) in &wait.count_targets {
                self.add(thread, *kind, Some(*res), 1);
            }
        }
    }

    fn close_sched(&mut self, thread: ThreadKey, state: SchedState, until: u64) {
        match state {
            SchedState::Unknown => {}
            SchedState::Running(s) => self.add(thread, MetricKind::Runtime, None, until - s),
            SchedState::Runnable(s) => self.add(thread, MetricKind::RqTime, None, until - s),
            SchedState::SleepInterruptible(s) => {
                self.add(thread, MetricKind::SleepTime, None, until - s)
            }
            SchedState::SleepUninterruptible { since, iowait } => {
                self.add(thread, MetricKind::BlockTime, None, until - since);
                if iowait {
                    self.add(thread, MetricKind::IowaitTime, None, until - since);
                }
            }
        }
    }
}

/// Per-session aggregation state. Feed events with [`Engine::ingest`] in
/// timestamp order and call [`Engine::flush_interval`] once per second.
#[derive(Debug)]
pub struct Engine {
    open: u64,
    threads: HashMap<ThreadKey, ThreadSlot>,
    last_seen: HashMap<ThreadKey, u64>,
    comms: HashMap<ThreadKey, String>,
    interest: HashMap<Bri, BTreeSet<Bri>>,
    endpoints: BTreeMap<Bri, SocketEndpoint>,
    fresh_endpoints: Vec<Bri>,
    acc: Accumulators,
    counters: Counters,
}

impl Engine {
    pub fn new(first_interval: u64) -> Self {
        Self {
            open: first_interval,
            threads: HashMap::new(),
            last_seen: HashMap::new(),
            comms: HashMap::new(),
            interest: HashMap::new(),
            endpoints: BTreeMap::new(),
            fresh_endpoints: Vec::new(),
            acc: Accumulators::default(),
            counters: Counters::default(),
        }
    }

    pub fn open_interval(&self) -> u64 {
        self.open
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn sched_state(&self, tgid: u32, tid: u32) -> SchedState {
        self.threads
            .get(&(tgid, tid))
            .map(|s| s.sched)
            .unwrap_or_default()
    }

    pub fn interest_list(&self, epoll: &Bri) -> Option<&BTreeSet<Bri>> {
        self.interest.get(epoll)
    }

    pub fn endpoints(&self) -> &BTreeMap<Bri, SocketEndpoint> {
        &self.endpoints
    }

    /// Endpoints first seen since the previous call, in discovery order.
    pub fn take_new_endpoints(&mut self) -> Vec<(Bri, SocketEndpoint)> {
        std::mem::take(&mut self.fresh_endpoints)
            .into_iter()
            .map(|b| (b, self.endpoints[&b].clone()))
            .collect()
    }

    pub fn ingest(&mut self, ev: &RawEvent) -> Result<(), EngineError> {
        let invalid = |reason| EngineError::InvalidEvent {
            t_ns: ev.t_ns,
            tid: ev.tid,
            reason,
        };
        if ev.tgid == 0 || ev.tid == 0 {
            return Err(invalid("thread ids must be nonzero"));
        }
        ev.kind.validate().map_err(invalid)?;
        if ev.t_ns < interval_start(self.open) {
            self.counters.late += 1;
            return Ok(());
        }
        if ev.t_ns >= interval_end(self.open) {
            return Err(EngineError::BeyondOpenInterval {
                t_ns: ev.t_ns,
                open: self.open,
            });
        }
        let key = (ev.tgid, ev.tid);
        let last = self.last_seen.entry(key).or_insert(ev.t_ns);
        if ev.t_ns < *last {
            self.counters.out_of_order += 1;
            return Ok(());
        }
        *last = ev.t_ns;
        if !ev.comm.is_empty() {
            self.comms.entry(key).or_insert_with(|| ev.comm.clone());
        }

        match &ev.kind {
            EventKind::SchedSwitchOut { .. }
            | EventKind::SchedSwitchIn
            | EventKind::SchedWakeup
            | EventKind::ThreadExit => self.on_sched_event(key, ev.t_ns, &ev.kind),
            EventKind::FifoIoEnter { .. } | EventKind::FifoIoExit => {
                self.on_fifo_io(key, ev.t_ns, &ev.kind)
            }
            EventKind::SockRecvEnter { .. }
            | EventKind::SockRecvExit
            | EventKind::SockSendEnter { .. }
            | EventKind::SockSendExit => self.on_socket_io(key, ev.t_ns, &ev.kind),
            EventKind::FutexEnter { .. } | EventKind::FutexExit { .. } => {
                self.on_futex(key, ev.t_ns, &ev.kind)
            }
            EventKind::PollfamEnter { .. } | EventKind::PollfamExit { .. } => {
                self.on_pollfam(key, ev.t_ns, &ev.kind)
            }
            EventKind::EpollInsert { .. }
            | EventKind::EpollRemove { .. }
            | EventKind::EpollWaitEnter { .. }
            | EventKind::EpollWaitExit { .. } => self.on_epoll(key, ev.t_ns, &ev.kind),
            EventKind::BlockRequest { .. } => self.on_block_request(key, &ev.kind),
        }
        Ok(())
    }

    fn on_sched_event(&mut self, key: ThreadKey, t: u64, kind: &EventKind) {
        let slot = self.threads.entry(key).or_default();
        self.acc.close_sched(key, slot.sched, t);
        slot.sched = match kind {
            EventKind::SchedSwitchOut { prev_state, iowait } => match prev_state {
                TaskState::Running => SchedState::Runnable(t),
                TaskState::Interruptible => SchedState::SleepInterruptible(t),
                TaskState::Uninterruptible => SchedState::SleepUninterruptible {
                    since: t,
                    iowait: *iowait,
                },
            },
            EventKind::SchedSwitchIn => SchedState::Running(t),
            EventKind::SchedWakeup => match slot.sched {
                SchedState::Running(_) | SchedState::Runnable(_) => slot.sched.with_since(t),
                _ => SchedState::Runnable(t),
            },
            EventKind::ThreadExit => {
                let slot = self.threads.remove(&key).unwrap_or_default();
                self.retire_calls(key, slot, t);
                return;
            }
            _ => unreachable!("not a scheduler event"),
        };
    }

    fn retire_calls(&mut self, key: ThreadKey, slot: ThreadSlot, t: u64) {
        let futex_wait = match slot.futex {
            Some(PendingFutex::Wait(w)) => Some(w),
            Some(PendingFutex::Wake(_)) => {
                self.counters.abandoned_calls += 1;
                None
            }
            None => None,
        };
        let waits = [
            slot.fifo,
            slot.sock_recv,
            slot.sock_send,
            futex_wait,
            slot.poll,
            slot.epoll,
        ];
        for w in waits.into_iter().flatten() {
            self.counters.abandoned_calls += 1;
            self.acc.close_wait(key, &w, t, false);
        }
    }

    /// Installs a new pending call in `slot_of(thread)`, retiring whatever
    /// call was already pending there.
    fn begin_wait(
        &mut self,
        key: ThreadKey,
        t: u64,
        wait: PendingWait,
        slot_of: fn(&mut ThreadSlot) -> &mut Option<PendingWait>,
    ) {
        let slot = self.threads.entry(key).or_default();
        if let Some(prev) = slot_of(slot).replace(wait) {
            self.counters.abandoned_calls += 1;
            self.acc.close_wait(key, &prev, t, false);
        }
    }

    fn end_wait(
        &mut self,
        key: ThreadKey,
        t: u64,
        slot_of: fn(&mut ThreadSlot) -> &mut Option<PendingWait>,
    ) {
        let pending = self.threads.get_mut(&key).and_then(|s| slot_of(s).take());
        match pending {
            Some(w) => self.acc.close_wait(key, &w, t, true),
            None => self.counters.unmatched_exits += 1,
        }
    }

    fn on_fifo_io(&mut self, key: ThreadKey, t: u64, kind: &EventKind) {
        match kind {
            EventKind::FifoIoEnter { bri } => {
                let res = Resource::Bri(*bri);
                let wait = PendingWait {
                    since: t,
                    time_targets: vec![(MetricKind::PipeWaitTime, res)],
                    count_targets: vec![(MetricKind::PipeWaitCount, res)],
                };
                self.begin_wait(key, t, wait, |s| &mut s.fifo);
            }
            EventKind::FifoIoExit => self.end_wait(key, t, |s| &mut s.fifo),
            _ => unreachable!(),
        }
    }

    fn on_socket_io(&mut self, key: ThreadKey, t: u64, kind: &EventKind) {
        match kind {
            EventKind::SockRecvEnter { bri, endpoint }
            | EventKind::SockSendEnter { bri, endpoint } => {
                if !endpoint.family.is_supported() {
                    self.counters.unsupported_socket_family += 1;
                    return;
                }
                if !self.endpoints.contains_key(bri) {
                    self.endpoints.insert(*bri, endpoint.clone());
                    self.fresh_endpoints.push(*bri);
                }
                let res = Resource::Bri(*bri);
                let wait = PendingWait {
                    since: t,
                    time_targets: vec![(MetricKind::SocketWaitTime, res)],
                    count_targets: vec![(MetricKind::SocketWaitCount, res)],
                };
                if matches!(kind, EventKind::SockRecvEnter { .. }) {
                    self.begin_wait(key, t, wait, |s| &mut s.sock_recv);
                } else {
                    self.begin_wait(key, t, wait, |s| &mut s.sock_send);
                }
            }
            EventKind::SockRecvExit => self.end_wait(key, t, |s| &mut s.sock_recv),
            EventKind::SockSendExit => self.end_wait(key, t, |s| &mut s.sock_send),
            _ => unreachable!(),
        }
    }

    fn on_futex(&mut self, key: ThreadKey, t: u64, kind: &EventKind) {
        match kind {
            EventKind::FutexEnter { op, uaddr } => {
                let futex = FutexRef {
                    tgid: key.0,
                    uaddr: *uaddr,
                };
                let pending = match classify_futex_op(*op) {
                    FutexOpClass::Other => {
                        self.counters.unknown_futex_ops += 1;
                        return;
                    }
                    FutexOpClass::Wait => PendingFutex::Wait(PendingWait {
                        since: t,
                        time_targets: vec![(MetricKind::FutexWaitTime, Resource::Futex(futex))],
                        count_targets: vec![(MetricKind::FutexWaitCount, Resource::Futex(futex))],
                    }),
                    FutexOpClass::Wake => PendingFutex::Wake(futex),
                };
                let slot = self.threads.entry(key).or_default();
                match slot.futex.replace(pending) {
                    Some(PendingFutex::Wait(prev)) => {
                        self.counters.abandoned_calls += 1;
                        self.acc.close_wait(key, &prev, t, false);
                    }
                    Some(PendingFutex::Wake(_)) => self.counters.abandoned_calls += 1,
                    None => {}
                }
            }
            EventKind::FutexExit { ret } => {
                let pending = self.threads.get_mut(&key).and_then(|s| s.futex.take());
                match pending {
                    Some(PendingFutex::Wait(w)) => self.acc.close_wait(key, &w, t, true),
                    Some(PendingFutex::Wake(futex)) => {
                        // Only wakes that actually woke somebody count.
                        if *ret >= 1 {
                            self.acc.add(
                                key,
                                MetricKind::FutexWakeCount,
                                Some(Resource::Futex(futex)),
                                1,
                            );
                        }
                    }
                    None => self.counters.unmatched_exits += 1,
                }
            }
            _ => unreachable!(),
        }
    }

    fn on_pollfam(&mut self, key: ThreadKey, t: u64, kind: &EventKind) {
        match kind {
            EventKind::PollfamEnter { bris } => {
                let registered: BTreeSet<Bri> = bris.iter().copied().collect();
                let mut wait = PendingWait {
                    since: t,
                    time_targets: Vec::new(),
                    count_targets: Vec::new(),
                };
                for bri in registered {
                    let (time, count) = match bri.kind() {
                        BriKind::Pipe => (MetricKind::PipeWaitTime, MetricKind::PipeWaitCount),
                        k if k.is_socket() => {
                            (MetricKind::SocketWaitTime, MetricKind::SocketWaitCount)
                        }
                        _ => continue,
                    };
                    wait.time_targets.push((time, Resource::Bri(bri)));
                    wait.count_targets.push((count, Resource::Bri(bri)));
                }
                self.begin_wait(key, t, wait, |s| &mut s.poll);
            }
            EventKind::PollfamExit { .. } => self.end_wait(key, t, |s| &mut s.poll),
            _ => unreachable!(),
        }
    }

    fn on_epoll(&mut self, key: ThreadKey, t: u64, kind: &EventKind) {
        match kind {
            EventKind::EpollInsert { epoll, target } => {
                self.interest.entry(*epoll).or_default().insert(*target);
            }
            EventKind::EpollRemove { epoll, target } => {
                let removed = self
                    .interest
                    .get_mut(epoll)
                    .is_some_and(|set| set.remove(target));
                if !removed {
                    self.counters.unregistered_epoll_removes += 1;
                }
            }
            EventKind::EpollWaitEnter { epoll } => {
                // The interest list is snapshotted here; registrations that
                // change mid-wait only affect later waits.
                let mut wait = PendingWait {
                    since: t,
                    time_targets: vec![(MetricKind::EpollWaitTime, Resource::Bri(*epoll))],
                    count_targets: vec![(MetricKind::EpollWaitCount, Resource::Bri(*epoll))],
                };
                if let Some(files) = self.interest.get(epoll) {
                    wait.time_targets.extend(files.iter().map(|f| {
                        (
                            MetricKind::EpollFileWait,
                            Resource::EpollFile {
                                epoll: *epoll,
                                file: *f,
                            },
                        )
                    }));
                }
                self.begin_wait(key, t, wait, |s| &mut s.epoll);
            }
            EventKind::EpollWaitExit { .. } => self.end_wait(key, t, |s| &mut s.epoll),
            _ => unreachable!(),
        }
    }

    fn on_block_request(&mut self, key: ThreadKey, kind: &EventKind) {
        if let EventKind::BlockRequest { device, sectors } = kind {
            self.acc.add(
                key,
                MetricKind::SectorCount,
                Some(Resource::Device(*device)),
                *sectors,
            );
        }
    }

    /// Closes interval `interval` and returns its samples.
    ///
    /// Open scheduler spans and in-flight calls are cut at the interval end;
    /// their remainder accrues to later intervals. Only nonzero accumulators
    /// are emitted, ordered by [`MetricSample::sort_key`].
    pub fn flush_interval(&mut self, interval: u64) -> Result<Vec<MetricSample>, EngineError> {
        if interval < self.open {
            return Err(EngineError::AlreadyFlushed { interval });
        }
        if interval > self.open {
            return Err(EngineError::IntervalSkipped {
                requested: interval,
                open: self.open,
            });
        }
        let boundary = interval_end(interval);
        for (key, slot) in self.threads.iter_mut() {
            self.acc.close_sched(*key, slot.sched, boundary);
            slot.sched = slot.sched.with_since(boundary);
            let futex_wait = match &mut slot.futex {
                Some(PendingFutex::Wait(w)) => Some(w),
                _ => None,
            };
            let waits = [
                slot.fifo.as_mut(),
                slot.sock_recv.as_mut(),
                slot.sock_send.as_mut(),
                futex_wait,
                slot.poll.as_mut(),
                slot.epoll.as_mut(),
            ];
            for w in waits.into_iter().flatten() {
                self.acc.close_wait(*key, w, boundary, false);
                w.since = boundary;
            }
        }

        let acc = std::mem::take(&mut self.acc.0);
        let samples = acc
            .into_iter()
            .map(|((thread, kind, resource), value)| {
                let comm = self.comms.get(&thread).cloned().unwrap_or_default();
                MetricSample {
                    interval_s: interval,
                    subject: ThreadRef {
                        tgid: thread.0,
                        tid: thread.1,
                        comm,
                    },
                    resource,
                    kind,
                    value,
                }
            })
            .collect();
        self.open += 1;
        Ok(samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::futex_op;
    use crate::ids::{DeviceRef, SocketEndpoint};
    use crate::metric::NS_PER_SEC;

    const MS: u64 = 1_000_000;

    fn ev(t: u64, tid: u32, kind: EventKind) -> RawEvent {
        RawEvent::new(t, 100, tid, "t", kind)
    }

    fn pipe() -> Bri {
        Bri::from_inode(BriKind::Pipe, 14, 2159682).unwrap()
    }

    fn sock(ino: u64) -> Bri {
        Bri::from_inode(BriKind::SocketInet, 8, ino).unwrap()
    }

    fn endpoint() -> SocketEndpoint {
        SocketEndpoint::inet(6, ("10.0.0.1", 40000), ("10.0.0.2", 5432))
    }

    fn value(samples: &[MetricSample], tid: u32, kind: MetricKind, res: Option<Resource>) -> u64 {
        samples
            .iter()
            .filter(|s| s.subject.tid == tid && s.kind == kind && s.resource == res)
            .map(|s| s.value)
            .sum()
    }

    fn run(events: &[RawEvent]) -> Vec<MetricSample> {
        let mut engine = Engine::new(0);
        for e in events {
            engine.ingest(e).unwrap();
        }
        engine.flush_interval(0).unwrap()
    }

    #[test]
    fn running_whole_interval_is_all_runtime() {
        let mut engine = Engine::new(0);
        engine.ingest(&ev(0, 1, EventKind::SchedSwitchIn)).unwrap();
        engine.flush_interval(0).unwrap();
        let out = engine.flush_interval(1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, MetricKind::Runtime);
        assert_eq!(out[0].value, NS_PER_SEC);
        assert_eq!(out[0].interval_s, 1);
    }

    #[test]
    fn iowait_sleep_counts_as_block_and_iowait() {
        let out = run(&[
            ev(0, 1, EventKind::SchedSwitchIn),
            ev(
                200 * MS,
                1,
                EventKind::SchedSwitchOut {
                    prev_state: TaskState::Uninterruptible,
                    iowait: true,
                },
            ),
            ev(500 * MS, 1, EventKind::SchedWakeup),
        ]);
        assert_eq!(value(&out, 1, MetricKind::BlockTime, None), 300 * MS);
        assert_eq!(value(&out, 1, MetricKind::IowaitTime, None), 300 * MS);
        assert_eq!(value(&out, 1, MetricKind::RqTime, None), 500 * MS);
        assert_eq!(value(&out, 1, MetricKind::Runtime, None), 200 * MS);
    }

    #[test]
    fn preemption_accrues_runqueue_time() {
        // Hand simulation: Running [0,0.3) Runnable [0.3,0.5) Running [0.5,1.0).
        let out = run(&[
            ev(0, 1, EventKind::SchedSwitchIn),
            ev(
                300 * MS,
                1,
                EventKind::SchedSwitchOut {
                    prev_state: TaskState::Running,
                    iowait: false,
                },
            ),
            ev(500 * MS, 1, EventKind::SchedSwitchIn),
        ]);
        assert_eq!(value(&out, 1, MetricKind::RqTime, None), 200 * MS);
        assert_eq!(value(&out, 1, MetricKind::Runtime, None), 800 * MS);
    }

    #[test]
    fn unknown_start_accrues_nothing() {
        let out = run(&[
            ev(400 * MS, 1, EventKind::FifoIoEnter { bri: pipe() }),
            ev(600 * MS, 1, EventKind::SchedSwitchIn),
        ]);
        // Only [0.6, 1.0) is known; the pipe wait is still open.
        assert_eq!(value(&out, 1, MetricKind::Runtime, None), 400 * MS);
        assert_eq!(value(&out, 1, MetricKind::SleepTime, None), 0);
        assert_eq!(
            value(
                &out,
                1,
                MetricKind::PipeWaitTime,
                Some(Resource::Bri(pipe()))
            ),
            600 * MS
        );
        assert_eq!(
            value(
                &out,
                1,
                MetricKind::PipeWaitCount,
                Some(Resource::Bri(pipe()))
            ),
            0
        );
    }

    #[test]
    fn sleep_split_across_boundary() {
        let mut engine = Engine::new(0);
        engine.ingest(&ev(0, 1, EventKind::SchedSwitchIn)).unwrap();
        engine
            .ingest(&ev(
                300 * MS,
                1,
                EventKind::SchedSwitchOut {
                    prev_state: TaskState::Interruptible,
                    iowait: false,
                },
            ))
            .unwrap();
        let first = engine.flush_interval(0).unwrap();
        engine
            .ingest(&ev(NS_PER_SEC + 300 * MS, 1, EventKind::SchedWakeup))
            .unwrap();
        let second = engine.flush_interval(1).unwrap();
        assert_eq!(value(&first, 1, MetricKind::SleepTime, None), 700 * MS);
        assert_eq!(value(&second, 1, MetricKind::SleepTime, None), 300 * MS);
        assert_eq!(value(&second, 1, MetricKind::RqTime, None), 700 * MS);
    }

    #[test]
    fn pipe_waits_per_thread_and_nonblocking_counts() {
        let res = Some(Resource::Bri(pipe()));
        let out = run(&[
            ev(0, 1, EventKind::FifoIoEnter { bri: pipe() }),
            ev(0, 2, EventKind::FifoIoEnter { bri: pipe() }),
            ev(0, 2, EventKind::FifoIoExit),
            ev(400 * MS, 1, EventKind::FifoIoExit),
        ]);
        assert_eq!(value(&out, 1, MetricKind::PipeWaitTime, res), 400 * MS);
        assert_eq!(value(&out, 1, MetricKind::PipeWaitCount, res), 1);
        assert_eq!(value(&out, 2, MetricKind::PipeWaitTime, res), 0);
        assert_eq!(value(&out, 2, MetricKind::PipeWaitCount, res), 1);
    }

    #[test]
    fn exit_without_enter_is_counted() {
        let mut engine = Engine::new(0);
        engine.ingest(&ev(5, 1, EventKind::FifoIoExit)).unwrap();
        engine.ingest(&ev(6, 1, EventKind::SockRecvExit)).unwrap();
        assert_eq!(engine.counters().unmatched_exits, 2);
        assert!(engine.flush_interval(0).unwrap().is_empty());
    }

    #[test]
    fn socket_recv_and_send_waits() {
        let res = Some(Resource::Bri(sock(1)));
        let out = run(&[
            ev(
                0,
                1,
                EventKind::SockRecvEnter {
                    bri: sock(1),
                    endpoint: endpoint(),
                },
            ),
            ev(900 * MS, 1, EventKind::SockRecvExit),
            ev(
                900 * MS,
                2,
                EventKind::SockSendEnter {
                    bri: sock(1),
                    endpoint: endpoint(),
                },
            ),
            ev(1000 * MS - 1, 2, EventKind::SockSendExit),
        ]);
        assert_eq!(value(&out, 1, MetricKind::SocketWaitTime, res), 900 * MS);
        assert_eq!(value(&out, 1, MetricKind::SocketWaitCount, res), 1);
        assert_eq!(
            value(&out, 2, MetricKind::SocketWaitTime, res),
            100 * MS - 1
        );
    }

    #[test]
    fn unsupported_socket_family_ignored() {
        let mut engine = Engine::new(0);
        let mut ep = endpoint();
        ep.family = crate::ids::SocketFamily::Unsupported(16);
        engine
            .ingest(&ev(
                0,
                1,
                EventKind::SockRecvEnter {
                    bri: sock(1),
                    endpoint: ep,
                },
            ))
            .unwrap();
        engine.ingest(&ev(10, 1, EventKind::SockRecvExit)).unwrap();
        assert_eq!(engine.counters().unsupported_socket_family, 1);
        assert!(engine.flush_interval(0).unwrap().is_empty());
        assert!(engine.endpoints().is_empty());
    }

    #[test]
    fn unix_endpoint_recorded_without_ports() {
        let mut engine = Engine::new(0);
        let bri = Bri::from_inode(BriKind::SocketUnix, 8, 77).unwrap();
        let ep = SocketEndpoint::unix("/run/demo.sock", "sock:77", "sock:78");
        engine
            .ingest(&ev(
                0,
                1,
                EventKind::SockRecvEnter {
                    bri,
                    endpoint: ep.clone(),
                },
            ))
            .unwrap();
        let fresh = engine.take_new_endpoints();
        assert_eq!(fresh, vec![(bri, ep)]);
        assert_eq!(fresh[0].1.src_port, 0);
        assert!(engine.take_new_endpoints().is_empty());
    }

    #[test]
    fn futex_wait_and_wake_semantics() {
        let f = Some(Resource::Futex(FutexRef {
            tgid: 100,
            uaddr: 0x10,
        }));
        let out = run(&[
            ev(
                0,
                1,
                EventKind::FutexEnter {
                    op: futex_op::WAIT | futex_op::PRIVATE_FLAG,
                    uaddr: 0x10,
                },
            ),
            ev(400 * MS, 1, EventKind::FutexExit { ret: 0 }),
            // Timed-out wait still counts.
            ev(
                400 * MS,
                1,
                EventKind::FutexEnter {
                    op: futex_op::WAIT_BITSET,
                    uaddr: 0x10,
                },
            ),
            ev(500 * MS, 1, EventKind::FutexExit { ret: -110 }),
            // Nobody woken.
            ev(
                0,
                2,
                EventKind::FutexEnter {
                    op: futex_op::WAKE,
                    uaddr: 0x10,
                },
            ),
            ev(1, 2, EventKind::FutexExit { ret: 0 }),
            // Two woken, one successful wake operation.
            ev(
                2,
                2,
                EventKind::FutexEnter {
                    op: futex_op::WAKE,
                    uaddr: 0x10,
                },
            ),
            ev(3, 2, EventKind::FutexExit { ret: 2 }),
        ]);
        assert_eq!(value(&out, 1, MetricKind::FutexWaitTime, f), 500 * MS);
        assert_eq!(value(&out, 1, MetricKind::FutexWaitCount, f), 2);
        assert_eq!(value(&out, 2, MetricKind::FutexWakeCount, f), 1);
        assert_eq!(value(&out, 2, MetricKind::FutexWaitTime, f), 0);
    }

    #[test]
    fn unknown_futex_op_ignored() {
        let mut engine = Engine::new(0);
        engine
            .ingest(&ev(
                0,
                1,
                EventKind::FutexEnter {
                    op: futex_op::WAKE_OP,
                    uaddr: 8,
                },
            ))
            .unwrap();
        engine
            .ingest(&ev(1, 1, EventKind::FutexExit { ret: 1 }))
            .unwrap();
        assert_eq!(engine.counters().unknown_futex_ops, 1);
        assert_eq!(engine.counters().unmatched_exits, 1);
        assert!(engine.flush_interval(0).unwrap().is_empty());
    }

    #[test]
    fn poll_attributes_to_every_registered_resource() {
        let bris = vec![pipe(), sock(1), sock(2)];
        let out = run(&[
            ev(0, 1, EventKind::PollfamEnter { bris: bris.clone() }),
            ev(900 * MS, 1, EventKind::PollfamExit { bris }),
        ]);
        assert_eq!(
            value(
                &out,
                1,
                MetricKind::PipeWaitTime,
                Some(Resource::Bri(pipe()))
            ),
            900 * MS
        );
        for s in [sock(1), sock(2)] {
            assert_eq!(
                value(&out, 1, MetricKind::SocketWaitTime, Some(Resource::Bri(s))),
                900 * MS
            );
            assert_eq!(
                value(&out, 1, MetricKind::SocketWaitCount, Some(Resource::Bri(s))),
                1
            );
        }
    }

    #[test]
    fn empty_poll_list_rejected() {
        let mut engine = Engine::new(0);
        let err = engine
            .ingest(&ev(0, 1, EventKind::PollfamExit { bris: vec![] }))
            .unwrap_err();
        assert!(matches!(err, EngineError::InvalidEvent { .. }));
    }

    #[test]
    fn epoll_wait_fans_out_over_interest_list() {
        let ep = Bri::from_epoll_object(0xffff9a7a3f5e1740).unwrap();
        let mut events = vec![];
        for i in 1..=3 {
            events.push(ev(
                0,
                9,
                EventKind::EpollInsert {
                    epoll: ep,
                    target: sock(i),
                },
            ));
        }
        events.push(ev(0, 1, EventKind::EpollWaitEnter { epoll: ep }));
        events.push(ev(0, 2, EventKind::EpollWaitEnter { epoll: ep }));
        events.push(ev(500 * MS, 2, EventKind::EpollWaitExit { epoll: ep }));
        let mut engine = Engine::new(0);
        for e in &events {
            engine.ingest(e).unwrap();
        }
        // Removal mid-wait does not change the in-flight wait.
        engine
            .ingest(&ev(
                600 * MS,
                9,
                EventKind::EpollRemove {
                    epoll: ep,
                    target: sock(3),
                },
            ))
            .unwrap();
        engine
            .ingest(&ev(999_999_999, 1, EventKind::EpollWaitExit { epoll: ep }))
            .unwrap();
        let out = engine.flush_interval(0).unwrap();
        let epres = Some(Resource::Bri(ep));
        assert_eq!(
            value(&out, 1, MetricKind::EpollWaitTime, epres),
            999_999_999
        );
        assert_eq!(value(&out, 2, MetricKind::EpollWaitTime, epres), 500 * MS);
        assert_eq!(value(&out, 2, MetricKind::EpollWaitCount, epres), 1);
        for i in 1..=3 {
            let pair = Some(Resource::EpollFile {
                epoll: ep,
                file: sock(i),
            });
            assert_eq!(value(&out, 1, MetricKind::EpollFileWait, pair), 999_999_999);
        }
        assert_eq!(engine.interest_list(&ep).unwrap().len(), 2);
    }

    #[test]
    fn removing_unregistered_resource_is_counted() {
        let ep = Bri::from_epoll_object(0x1000).unwrap();
        let mut engine = Engine::new(0);
        engine
            .ingest(&ev(
                0,
                1,
                EventKind::EpollRemove {
                    epoll: ep,
                    target: sock(1),
                },
            ))
            .unwrap();
        assert_eq!(engine.counters().unregistered_epoll_removes, 1);
    }

    #[test]
    fn block_requests_sum_sectors() {
        let dev = DeviceRef::new(259, 0);
        let out = run(&[
            ev(
                0,
                1,
                EventKind::BlockRequest {
                    device: dev,
                    sectors: 8,
                },
            ),
            ev(
                1,
                1,
                EventKind::BlockRequest {
                    device: dev,
                    sectors: 0,
                },
            ),
            ev(
                2,
                1,
                EventKind::BlockRequest {
                    device: dev,
                    sectors: 16,
                },
            ),
        ]);
        assert_eq!(out.len(), 1);
        assert_eq!(
            value(
                &out,
                1,
                MetricKind::SectorCount,
                Some(Resource::Device(dev))
            ),
            24
        );
    }

    #[test]
    fn sector_counts_saturate() {
        let dev = DeviceRef::new(8, 0);
        let out = run(&[
            ev(
                0,
                1,
                EventKind::BlockRequest {
                    device: dev,
                    sectors: u64::MAX,
                },
            ),
            ev(
                1,
                1,
                EventKind::BlockRequest {
                    device: dev,
                    sectors: 5,
                },
            ),
        ]);
        assert_eq!(out[0].value, u64::MAX);
    }

    #[test]
    fn out_of_order_and_late_events_dropped() {
        let mut engine = Engine::new(0);
        engine
            .ingest(&ev(500, 1, EventKind::SchedSwitchIn))
            .unwrap();
        engine.ingest(&ev(400, 1, EventKind::SchedWakeup)).unwrap();
        assert_eq!(engine.counters().out_of_order, 1);
        engine.flush_interval(0).unwrap();
        engine
            .ingest(&ev(999, 2, EventKind::SchedSwitchIn))
            .unwrap();
        assert_eq!(engine.counters().late, 1);
        assert_eq!(engine.sched_state(100, 2), SchedState::Unknown);
    }

    #[test]
    fn flush_ordering_enforced() {
        let mut engine = Engine::new(5);
        assert!(engine.flush_interval(5).unwrap().is_empty());
        assert_eq!(
            engine.flush_interval(5),
            Err(EngineError::AlreadyFlushed { interval: 5 })
        );
        assert_eq!(
            engine.flush_interval(9),
            Err(EngineError::IntervalSkipped {
                requested: 9,
                open: 6
            })
        );
        let err = engine
            .ingest(&ev(7 * NS_PER_SEC, 1, EventKind::SchedSwitchIn))
            .unwrap_err();
        assert!(matches!(err, EngineError::BeyondOpenInterval { .. }));
    }

    #[test]
    fn thread_exit_retires_state_and_pending_calls() {
        let mut engine = Engine::new(0);
        engine.ingest(&ev(0, 1, EventKind::SchedSwitchIn)).unwrap();
        engine
            .ingest(&ev(0, 1, EventKind::FifoIoEnter { bri: pipe() }))
            .unwrap();
        engine
            .ingest(&ev(100 * MS, 1, EventKind::ThreadExit))
            .unwrap();
        assert_eq!(engine.sched_state(100, 1), SchedState::Unknown);
        assert_eq!(engine.counters().abandoned_calls, 1);
        let out = engine.flush_interval(0).unwrap();
        let res = Some(Resource::Bri(pipe()));
        assert_eq!(value(&out, 1, MetricKind::Runtime, None), 100 * MS);
        assert_eq!(value(&out, 1, MetricKind::PipeWaitTime, res), 100 * MS);
        assert_eq!(value(&out, 1, MetricKind::PipeWaitCount, res), 0);
    }

    #[test]
    fn identical_streams_identical_output() {
        let events = vec![
            ev(0, 1, EventKind::SchedSwitchIn),
            ev(10, 2, EventKind::FutexEnter { op: 0, uaddr: 4 }),
            ev(300, 1, EventKind::FifoIoEnter { bri: pipe() }),
            ev(900, 1, EventKind::FifoIoExit),
            ev(1000, 2, EventKind::FutexExit { ret: 0 }),
        ];
        assert_eq!(run(&events), run(&events));
    }
}
