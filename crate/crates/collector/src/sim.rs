//! A stand-in for the in-kernel probes driven by a recorded event stream.
//!
//! Each read after the first consumes one interval of events, accumulates
//! them with the reference engine, applies the scope filter the probes apply
//! and returns cumulative totals keyed exactly as the kernel keys them.

use std::collections::{BTreeMap, BTreeSet};

use kprism_core::{interval_of, Bri, BriKind, Engine, EventKind, RawEvent};

use crate::backend::{AttachReport, ProbeBackend, Summary};
use crate::wire::{metric_class, DiscoveryRecord, WireKey, WireValue};
use crate::CollectError;

#[derive(Debug)]
pub struct SimulatedKernel {
    events: Vec<RawEvent>,
    pos: usize,
    engine: Engine,
    duration_s: u64,
    attached: bool,
    baseline_taken: bool,
    members: BTreeSet<u32>,
    totals: BTreeMap<WireKey, WireValue>,
    overflow: BTreeMap<u64, u64>,
    fail_at: Option<u64>,
    comms: BTreeMap<(u32, u32), String>,
    seen: BTreeSet<(u32, Bri)>,
    /// Interval the next read consumes.
    next: u64,
}

impl SimulatedKernel {
    /// `events` must be in timestamp order; intervals `0..duration_s` are
    /// served, later reads see no new activity.
    pub fn new(events: Vec<RawEvent>, duration_s: u64) -> Self {
        Self {
            events,
            pos: 0,
            engine: Engine::new(0),
            duration_s,
            attached: false,
            baseline_taken: false,
            members: BTreeSet::new(),
            totals: BTreeMap::new(),
            overflow: BTreeMap::new(),
            fail_at: None,
            comms: BTreeMap::new(),
            seen: BTreeSet::new(),
            next: 0,
        }
    }

    /// Accumulated before the session attached, as left by an earlier reader.
    pub fn preload(&mut self, key: WireKey, value: WireValue) {
        let slot = self.totals.entry(key).or_default();
        *slot = slot.saturating_add(value);
    }

    /// Reports `dropped` lost discovery records with interval `interval`.
    pub fn force_overflow(&mut self, interval: u64, dropped: u64) {
        self.overflow.insert(interval, dropped);
    }

    /// Makes the read of `interval` fail.
    pub fn fail_at(&mut self, interval: u64) {
        self.fail_at = Some(interval);
    }

    pub fn members(&self) -> &BTreeSet<u32> {
        &self.members
    }

    pub fn totals(&self) -> &BTreeMap<WireKey, WireValue> {
        &self.totals
    }

    fn discover(&mut self, ev: &RawEvent, out: &mut Vec<DiscoveryRecord>) {
        let (tgid, tid, ts_ns) = (ev.tgid, ev.tid, ev.t_ns);
        if !ev.comm.is_empty() && self.comms.get(&(tgid, tid)) != Some(&ev.comm) {
            self.comms.insert((tgid, tid), ev.comm.clone());
            out.push(DiscoveryRecord::Comm {
                tgid,
                tid,
                ts_ns,
                comm: ev.comm.clone(),
            });
        }
        let mut pipe = |bri: &Bri, out: &mut Vec<DiscoveryRecord>| {
            if bri.kind() == BriKind::Pipe && self.seen.insert((tgid, *bri)) {
                out.push(DiscoveryRecord::Pipe {
                    tgid,
                    tid,
                    ts_ns,
                    bri: *bri,
                });
            }
        };
        match &ev.kind {
            EventKind::FifoIoEnter { bri } => pipe(bri, out),
            EventKind::PollfamEnter { bris } => {
                for b in bris {
                    pipe(b, out);
                }
            }
            EventKind::SockRecvEnter { bri, endpoint }
            | EventKind::SockSendEnter { bri, endpoint } => {
                if self.seen.insert((tgid, *bri)) {
                    out.push(DiscoveryRecord::Socket {
                        tgid,
                        tid,
                        ts_ns,
                        bri: *bri,
                        endpoint: endpoint.clone(),
                    });
                }
            }
            EventKind::EpollInsert { epoll, target } | EventKind::EpollRemove { epoll, target } => {
                out.push(DiscoveryRecord::EpollCtl {
                    tgid,
                    tid,
                    ts_ns,
                    add: matches!(ev.kind, EventKind::EpollInsert { .. }),
                    epoll: *epoll,
                    target: *target,
                })
            }
            _ => {}
        }
    }

    fn advance(&mut self) -> Result<Vec<DiscoveryRecord>, CollectError> {
        let iv = self.next;
        self.next += 1;
        let mut discovery = Vec::new();
        if iv >= self.duration_s {
            return Ok(discovery);
        }
        while self.pos < self.events.len() && interval_of(self.events[self.pos].t_ns) <= iv {
            let ev = self.events[self.pos].clone();
            self.pos += 1;
            self.discover(&ev, &mut discovery);
            if let Err(e) = self.engine.ingest(&ev) {
                log::warn!("simulated probe dropped event: {e}");
            }
        }
        let samples = self
            .engine
            .flush_interval(iv)
            .map_err(|e| CollectError::Backend(e.to_string()))?;
        for s in samples {
            if !s.kind.is_global_scope() && !self.members.contains(&s.subject.tgid) {
                continue;
            }
            let key = WireKey::new(s.subject.tgid, s.subject.tid, s.kind, s.resource.as_ref());
            let slot = self.totals.entry(key).or_default();
            let add = if metric_class(s.kind).1 {
                WireValue {
                    time_ns: 0,
                    count: s.value,
                }
            } else {
                WireValue {
                    time_ns: s.value,
                    count: 0,
                }
            };
            *slot = slot.saturating_add(add);
        }
        Ok(discovery)
    }
}

impl ProbeBackend for SimulatedKernel {
    fn attach(&mut self, members: &BTreeSet<u32>) -> Result<AttachReport, CollectError> {
        self.members.extend(members);
        self.attached = true;
        Ok(AttachReport {
            attached: vec!["simulated".to_string()],
            unavailable: Vec::new(),
        })
    }

    fn add_scope_member(&mut self, tgid: u32) -> Result<(), CollectError> {
        self.members.insert(tgid);
        Ok(())
    }

    fn read_summaries(&mut self) -> Result<Summary, CollectError> {
        if !self.attached {
            return Err(CollectError::Backend("read before attach".into()));
        }
        let mut dropped = 0;
        let discovery = if self.baseline_taken {
            let iv = self.next;
            if self.fail_at == Some(iv) {
                return Err(CollectError::Backend(format!(
                    "map read failed at interval {iv}"
                )));
            }
            dropped = self.overflow.get(&iv).copied().unwrap_or(0);
            self.advance()?
        } else {
            self.baseline_taken = true;
            Vec::new()
        };
        Ok(Summary {
            entries: self.totals.iter().map(|(k, v)| (*k, *v)).collect(),
            discovery,
            dropped,
        })
    }
}
