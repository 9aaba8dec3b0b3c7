//! Reference accumulator for checking the engine.
//!
//! Nothing here is shared with the engine. Instead of a streaming state
//! machine, every span is recovered by scanning the trace for the event that
//! ends it, and every span is then intersected with every interval. Slow, but
//! each step can be checked against the metric definitions by eye.

use std::collections::{BTreeMap, BTreeSet};

use kprism_core::{
    classify_futex_op, interval_of, sort_samples, Bri, BriKind, EventKind, FutexOpClass, FutexRef,
    MetricKind, MetricSample, RawEvent, Resource, TaskState, ThreadRef, NS_PER_SEC,
};

use crate::trace::Trace;

type Key = (u32, u32);

/// A stretch of time charged to a list of (metric, resource) pairs.
struct Span {
    key: Key,
    start: u64,
    end: u64,
    charges: Vec<(MetricKind, Option<Resource>)>,
}

/// A count or sector amount landing in the interval containing `t`.
struct Point {
    key: Key,
    t: u64,
    metric: MetricKind,
    resource: Resource,
    amount: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Family {
    Fifo,
    SockRecv,
    SockSend,
    Futex,
    Poll,
    Epoll,
}

fn enter_family(kind: &EventKind) -> Option<Family> {
    match kind {
        EventKind::FifoIoEnter { .. } => Some(Family::Fifo),
        EventKind::SockRecvEnter { endpoint, .. } if endpoint.family.is_supported() => {
            Some(Family::SockRecv)
        }
        EventKind::SockSendEnter { endpoint, .. } if endpoint.family.is_supported() => {
            Some(Family::SockSend)
        }
        EventKind::FutexEnter { op, .. } if classify_futex_op(*op) != FutexOpClass::Other => {
            Some(Family::Futex)
        }
        EventKind::PollfamEnter { .. } => Some(Family::Poll),
        EventKind::EpollWaitEnter { .. } => Some(Family::Epoll),
        _ => None,
    }
}

fn exit_family(kind: &EventKind) -> Option<Family> {
    match kind {
        EventKind::FifoIoExit => Some(Family::Fifo),
        EventKind::SockRecvExit => Some(Family::SockRecv),
        EventKind::SockSendExit => Some(Family::SockSend),
        EventKind::FutexExit { .. } => Some(Family::Futex),
        EventKind::PollfamExit { .. } => Some(Family::Poll),
        EventKind::EpollWaitExit { .. } => Some(Family::Epoll),
        _ => None,
    }
}

/// Interest list of `epoll` just before event `upto`, rebuilt from scratch.
fn interest_at(events: &[RawEvent], upto: usize, epoll: Bri) -> BTreeSet<Bri> {
    let mut set = BTreeSet::new();
    for ev in &events[..upto] {
        match &ev.kind {
            EventKind::EpollInsert { epoll: e, target } if *e == epoll => {
                set.insert(*target);
            }
            EventKind::EpollRemove { epoll: e, target } if *e == epoll => {
                set.remove(target);
            }
            _ => {}
        }
    }
    set
}

/// What a call's time and completion are charged to.
fn call_charges(
    events: &[RawEvent],
    idx: usize,
) -> (Vec<(MetricKind, Resource)>, Vec<(MetricKind, Resource)>) {
    let ev = &events[idx];
    match &ev.kind {
        EventKind::FifoIoEnter { bri } => (
            vec![(MetricKind::PipeWaitTime, Resource::Bri(*bri))],
            vec![(MetricKind::PipeWaitCount, Resource::Bri(*bri))],
        ),
        EventKind::SockRecvEnter { bri, .. } | EventKind::SockSendEnter { bri, .. } => (
            vec![(MetricKind::SocketWaitTime, Resource::Bri(*bri))],
            vec![(MetricKind::SocketWaitCount, Resource::Bri(*bri))],
        ),
        EventKind::FutexEnter { op, uaddr } => {
            let f = Resource::Futex(FutexRef {
                tgid: ev.tgid,
                uaddr: *uaddr,
            });
            match classify_futex_op(*op) {
                FutexOpClass::Wait => (
                    vec![(MetricKind::FutexWaitTime, f)],
                    vec![(MetricKind::FutexWaitCount, f)],
                ),
                // Wakes carry no time; their count depends on the return value.
                _ => (vec![], vec![]),
            }
        }
        EventKind::PollfamEnter { bris } => {
            let unique: BTreeSet<Bri> = bris.iter().copied().collect();
            let mut time = vec![];
            let mut count = vec![];
            for b in unique {
                if b.kind() == BriKind::Pipe {
                    time.push((MetricKind::PipeWaitTime, Resource::Bri(b)));
                    count.push((MetricKind::PipeWaitCount, Resource::Bri(b)));
                } else if b.kind().is_socket() {
                    time.push((MetricKind::SocketWaitTime, Resource::Bri(b)));
                    count.push((MetricKind::SocketWaitCount, Resource::Bri(b)));
                }
            }
            (time, count)
        }
        EventKind::EpollWaitEnter { epoll } => {
            let mut time = vec![(MetricKind::EpollWaitTime, Resource::Bri(*epoll))];
            for file in interest_at(events, idx, *epoll) {
                time.push((
                    MetricKind::EpollFileWait,
                    Resource::EpollFile {
                        epoll: *epoll,
                        file,
                    },
                ));
            }
            (
                time,
                vec![(MetricKind::EpollWaitCount, Resource::Bri(*epoll))],
            )
        }
        _ => unreachable!("not a call entry"),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sched {
    Unknown,
    Running,
    Runnable,
    Sleep,
    Block(bool),
}

fn sched_charges(state: Sched) -> Vec<(MetricKind, Option<Resource>)> {
    match state {
        Sched::Unknown => vec![],
        Sched::Running => vec![(MetricKind::Runtime, None)],
        Sched::Runnable => vec![(MetricKind::RqTime, None)],
        Sched::Sleep => vec![(MetricKind::SleepTime, None)],
        Sched::Block(false) => vec![(MetricKind::BlockTime, None)],
        Sched::Block(true) => vec![
            (MetricKind::BlockTime, None),
            (MetricKind::IowaitTime, None),
        ],
    }
}

/// Accumulates a validated trace into samples for intervals
/// `0..duration_s`, sorted like the engine's output.
pub fn oracle_accumulate(trace: &Trace) -> Vec<MetricSample> {
    let events = &trace.events;
    let horizon = trace.header.duration_s * NS_PER_SEC;
    let mut spans: Vec<Span> = Vec::new();
    let mut points: Vec<Point> = Vec::new();

    let threads: BTreeSet<Key> = events.iter().map(|e| (e.tgid, e.tid)).collect();
    for &key in &threads {
        let mine: Vec<usize> = (0..events.len())
            .filter(|&i| (events[i].tgid, events[i].tid) == key)
            .collect();

        // Scheduler spans between consecutive scheduler events.
        let mut state = Sched::Unknown;
        let mut since = 0;
        for &i in &mine {
            let ev = &events[i];
            if !ev.kind.is_sched() {
                continue;
            }
            spans.push(Span {
                key,
                start: since,
                end: ev.t_ns,
                charges: sched_charges(state),
            });
            state = match &ev.kind {
                EventKind::SchedSwitchOut { prev_state, iowait } => match prev_state {
                    TaskState::Running => Sched::Runnable,
                    TaskState::Interruptible => Sched::Sleep,
                    TaskState::Uninterruptible => Sched::Block(*iowait),
                },
                EventKind::SchedSwitchIn => Sched::Running,
                EventKind::SchedWakeup if state == Sched::Running => Sched::Running,
                EventKind::SchedWakeup => Sched::Runnable,
                _ => Sched::Unknown,
            };
            since = ev.t_ns;
        }
        spans.push(Span {
            key,
            start: since,
            end: horizon,
            charges: sched_charges(state),
        });

        // Calls: each active entry runs until the next same-family entry or
        // exit of this thread, or the thread's exit, or the end of the trace.
        for (pos, &i) in mine.iter().enumerate() {
            let ev = &events[i];
            if let EventKind::BlockRequest { device, sectors } = &ev.kind {
                points.push(Point {
                    key,
                    t: ev.t_ns,
                    metric: MetricKind::SectorCount,
                    resource: Resource::Device(*device),
                    amount: *sectors,
                });
                continue;
            }
            let Some(family) = enter_family(&ev.kind) else {
                continue;
            };
            let mut end = horizon;
            let mut completed_with: Option<&EventKind> = None;
            for &j in &mine[pos + 1..] {
                let later = &events[j].kind;
                if matches!(later, EventKind::ThreadExit) || enter_family(later) == Some(family) {
                    end = events[j].t_ns;
                    break;
                }
                if exit_family(later) == Some(family) {
                    end = events[j].t_ns;
                    completed_with = Some(later);
                    break;
                }
            }
            let (time, count) = call_charges(events, i);
            spans.push(Span {
                key,
                start: ev.t_ns,
                end,
                charges: time.into_iter().map(|(m, r)| (m, Some(r))).collect(),
            });
            let Some(exit) = completed_with else {
                continue;
            };
            for (metric, resource) in count {
                points.push(Point {
                    key,
                    t: end,
                    metric,
                    resource,
                    amount: 1,
                });
            }
            if let (EventKind::FutexEnter { op, uaddr }, EventKind::FutexExit { ret }) =
                (&ev.kind, exit)
            {
                if classify_futex_op(*op) == FutexOpClass::Wake && *ret > 0 {
                    points.push(Point {
                        key,
                        t: end,
                        metric: MetricKind::FutexWakeCount,
                        resource: Resource::Futex(FutexRef {
                            tgid: key.0,
                            uaddr: *uaddr,
                        }),
                        amount: 1,
                    });
                }
            }
        }
    }

    let mut totals: BTreeMap<(u64, Key, MetricKind, Option<Resource>), u128> = BTreeMap::new();
    for span in &spans {
        for iv in 0..trace.header.duration_s {
            let lo = span.start.max(iv * NS_PER_SEC);
            let hi = span.end.min((iv + 1) * NS_PER_SEC);
            if hi <= lo {
                continue;
            }
            for (metric, resource) in &span.charges {
                *totals
                    .entry((iv, span.key, *metric, *resource))
                    .or_default() += u128::from(hi - lo);
            }
        }
    }
    for p in &points {
        *totals
            .entry((interval_of(p.t), p.key, p.metric, Some(p.resource)))
            .or_default() += u128::from(p.amount);
    }

    let first_comm = first_comms(events);
    let mut out: Vec<MetricSample> = totals
        .into_iter()
        .filter(|(_, v)| *v > 0)
        .map(|((iv, key, metric, resource), v)| MetricSample {
            interval_s: iv,
            subject: ThreadRef {
                tgid: key.0,
                tid: key.1,
                comm: match first_comm.get(&key) {
                    Some((since, name)) if *since <= iv => name.clone(),
                    _ => String::new(),
                },
            },
            resource,
            kind: metric,
            value: u64::try_from(v).unwrap_or(u64::MAX),
        })
        .collect();
    sort_samples(&mut out);
    out
}

/// First non-empty name each thread reported, with the interval it
/// appeared in. Samples of earlier intervals carry no name.
fn first_comms(events: &[RawEvent]) -> BTreeMap<Key, (u64, String)> {
    let mut out = BTreeMap::new();
    for e in events.iter().filter(|e| !e.comm.is_empty()) {
        out.entry((e.tgid, e.tid))
            .or_insert_with(|| (interval_of(e.t_ns), e.comm.clone()));
    }
    out
}
