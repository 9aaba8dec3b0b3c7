//! Synthetic scenario traces with known ground truth.
//!
//! Each thread's timeline is scripted one second at a time: a list of
//! blocking calls and preemptions is laid out with running time between
//! them, and the script always ends exactly on the second boundary, so
//! scheduler spans tile the whole trace. Scenario signals follow a ramp
//! during an intervention window covering the middle half of the trace.

use std::fmt;
use std::str::FromStr;

use kprism_core::{
    futex_op, Bri, BriKind, DeviceRef, EventKind, FutexRef, MetricKind, RawEvent, Resource,
    SocketEndpoint, SocketFamily, TaskState, NS_PER_SEC,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Trace, TraceHeader, TRACE_VERSION};

pub const EPOCH_WALL_S: u64 = 1_700_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LockContention,
    DiskContention,
    CpuContention,
    ExternalDependency,
    Idle,
    Random,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::LockContention,
        ScenarioKind::DiskContention,
        ScenarioKind::CpuContention,
        ScenarioKind::ExternalDependency,
        ScenarioKind::Idle,
        ScenarioKind::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::LockContention => "lock_contention",
            ScenarioKind::DiskContention => "disk_contention",
            ScenarioKind::CpuContention => "cpu_contention",
            ScenarioKind::ExternalDependency => "external_dependency",
            ScenarioKind::Idle => "idle",
            ScenarioKind::Random => "random",
        }
    }

    fn min_threads(self) -> u32 {
        match self {
            ScenarioKind::LockContention => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = GenerateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GenerateError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub threads: u32,
    pub duration_s: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("{kind} needs at least {need} threads, got {got}")]
    TooFewThreads {
        kind: ScenarioKind,
        need: u32,
        got: u32,
    },
    #[error("duration must be at least 1 s")]
    NoDuration,
}

/// A (thread, resource, metric) triple the analysis is expected to flag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TruthItem {
    pub tgid: u32,
    pub tid: u32,
    pub res: String,
    pub metric: MetricKind,
}

/// A dependency the tracking procedure is expected to report.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpectedEdge {
    pub from: (u32, u32),
    pub to: (u32, u32),
    pub res: String,
    pub mechanism: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: ScenarioKind,
    pub seed: u64,
    /// The monitored application.
    pub target_tgids: Vec<u32>,
    /// Wall-clock seconds `[start, end)` of the intervention.
    pub intervention: (u64, u64),
    pub flagged: Vec<TruthItem>,
    pub edges: Vec<ExpectedEdge>,
    /// Threads expected in the tracking list, beyond the entrypoints.
    pub reachable: Vec<(u32, u32)>,
    pub device: Option<DeviceRef>,
    /// Constructed share of `device` held by the target, per wall second.
    pub device_share: Vec<(u64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub trace: Trace,
    /// KPI points `(wall second, value)`; higher is worse.
    pub kpi: Vec<(u64, f64)>,
    pub truth: GroundTruth,
}

impl Generated {
    pub fn kpi_csv(&self) -> String {
        let mut out = String::from("ts,value\n");
        for (ts, v) in &self.kpi {
            out.push_str(&format!("{ts},{v:.6}\n"));
        }
        out
    }
}

pub fn generate(spec: &ScenarioSpec) -> Result<Generated, GenerateError> {
    if spec.duration_s == 0 {
        return Err(GenerateError::NoDuration);
    }
    let need = spec.kind.min_threads();
    if spec.threads < need {
        return Err(GenerateError::TooFewThreads {
            kind: spec.kind,
            need,
            got: spec.threads,
        });
    }
    let mut g = Gen::new(spec);
    match spec.kind {
        ScenarioKind::LockContention => g.lock_contention(),
        ScenarioKind::DiskContention => g.disk_contention(),
        ScenarioKind::CpuContention => g.cpu_contention(),
        ScenarioKind::ExternalDependency => g.external_dependency(),
        ScenarioKind::Idle => g.idle(),
        ScenarioKind::Random => g.random(),
    }
    Ok(g.finish())
}

/// One step of a thread's per-second script.
#[derive(Debug, Clone)]
enum Step {
    /// Off-CPU wait, optionally bracketed by a call, followed by `rq` of
    /// runqueue time before the thread runs again.
    Block {
        call: Option<(EventKind, EventKind)>,
        state: TaskState,
        iowait: bool,
        wait: u64,
        rq: u64,
    },
    /// A call that returns without sleeping.
    Call {
        enter: EventKind,
        exit: EventKind,
        dur: u64,
    },
    Preempt {
        rq: u64,
    },
    Disk {
        device: DeviceRef,
        sectors: u64,
    },
}

impl Step {
    fn cost(&self) -> u64 {
        match self {
            Step::Block { wait, rq, .. } => wait + rq,
            Step::Call { dur, .. } => *dur,
            Step::Preempt { rq } => *rq,
            Step::Disk { .. } => 0,
        }
    }
}

struct Timeline {
    tgid: u32,
    tid: u32,
    comm: String,
    t: u64,
    events: Vec<RawEvent>,
}

impl Timeline {
    fn new(tgid: u32, tid: u32, comm: &str) -> Self {
        let mut tl = Self {
            tgid,
            tid,
            comm: comm.to_string(),
            t: 0,
            events: Vec::new(),
        };
        tl.emit(EventKind::SchedSwitchIn);
        tl
    }

    fn key(&self) -> (u32, u32) {
        (self.tgid, self.tid)
    }

    fn emit(&mut self, kind: EventKind) {
        self.events.push(RawEvent::new(
            self.t,
            self.tgid,
            self.tid,
            self.comm.as_str(),
            kind,
        ));
    }

    fn switch_out(&mut self, prev_state: TaskState, iowait: bool) {
        self.emit(EventKind::SchedSwitchOut { prev_state, iowait });
    }

    /// Lays out `steps` inside second `s`, spreading the leftover running
    /// time evenly before each step. The thread is running on entry and exit.
    fn second(&mut self, s: u64, steps: Vec<Step>) {
        let start = s * NS_PER_SEC;
        let end = start + NS_PER_SEC;
        debug_assert!(self.t <= start);
        self.t = start;
        let busy: u64 = steps.iter().map(Step::cost).sum();
        assert!(
            busy < NS_PER_SEC,
            "second {s} of tid {} overbooked",
            self.tid
        );
        let chunk = (NS_PER_SEC - busy) / (steps.len() as u64 + 1);
        for step in steps {
            self.t += chunk;
            match step {
                Step::Block {
                    call,
                    state,
                    iowait,
                    wait,
                    rq,
                } => {
                    let exit = call.map(|(enter, exit)| {
                        self.emit(enter);
                        exit
                    });
                    self.switch_out(state, iowait);
                    self.t += wait;
                    self.emit(EventKind::SchedWakeup);
                    self.t += rq;
                    self.emit(EventKind::SchedSwitchIn);
                    if let Some(exit) = exit {
                        self.emit(exit);
                    }
                }
                Step::Call { enter, exit, dur } => {
                    self.emit(enter);
                    self.t += dur;
                    self.emit(exit);
                }
                Step::Preempt { rq } => {
                    self.switch_out(TaskState::Running, false);
                    self.t += rq;
                    self.emit(EventKind::SchedSwitchIn);
                }
                Step::Disk { device, sectors } => {
                    self.emit(EventKind::BlockRequest { device, sectors })
                }
            }
        }
        debug_assert!(self.t < end);
        self.t = end;
    }
}

fn ns(fraction: f64) -> u64 {
    (fraction * NS_PER_SEC as f64).round() as u64
}

fn pipe(ino: u64) -> Bri {
    Bri::from_inode(BriKind::Pipe, 14, ino).expect("pipe bri")
}

fn socket(ino: u64) -> Bri {
    Bri::from_inode(BriKind::SocketInet, 8, ino).expect("socket bri")
}

struct Gen {
    spec: ScenarioSpec,
    rng: ChaCha8Rng,
    threads: Vec<Timeline>,
    extra_events: Vec<RawEvent>,
    kpi_signal: Vec<f64>,
    truth: GroundTruth,
}

impl Gen {
    fn new(spec: &ScenarioSpec) -> Self {
        let d = spec.duration_s;
        Self {
            spec: *spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            threads: Vec::new(),
            extra_events: Vec::new(),
            kpi_signal: vec![0.0; d as usize],
            truth: GroundTruth {
                scenario: spec.kind,
                seed: spec.seed,
                target_tgids: Vec::new(),
                intervention: (EPOCH_WALL_S + d / 4, EPOCH_WALL_S + 3 * d / 4),
                flagged: Vec::new(),
                edges: Vec::new(),
                reachable: Vec::new(),
                device: None,
                device_share: Vec::new(),
            },
        }
    }

    fn duration(&self) -> u64 {
        self.spec.duration_s
    }

    /// Ramp from a small value up to 1 across the intervention window, zero
    /// outside it.
    fn signal(&self, s: u64) -> f64 {
        let d = self.duration();
        let (a, b) = (d / 4, 3 * d / 4);
        if s < a || s >= b {
            0.0
        } else {
            (s - a + 1) as f64 / (b - a) as f64
        }
    }

    fn jitter(&mut self) -> f64 {
        self.rng.random_range(0.9..=1.1)
    }

    /// `total` split into `n` blocking steps built by `make`.
    fn split<F>(&mut self, total: u64, n: u64, mut make: F) -> Vec<Step>
    where
        F: FnMut(u64, &mut ChaCha8Rng) -> Step,
    {
        if total == 0 || n == 0 {
            return Vec::new();
        }
        let part = total / n;
        (0..n)
            .map(|i| {
                let amount = if i + 1 == n {
                    total - part * (n - 1)
                } else {
                    part
                };
                make(amount, &mut self.rng)
            })
            .collect()
    }

    /// One or two short preemptions, for background runqueue noise.
    fn preemptions(&mut self) -> Vec<Step> {
        let n = self.rng.random_range(1..=2);
        (0..n)
            .map(|_| Step::Preempt {
                rq: self.rng.random_range(500_000..3_000_000),
            })
            .collect()
    }

    fn shuffle(&mut self, mut steps: Vec<Step>) -> Vec<Step> {
        steps.shuffle(&mut self.rng);
        steps
    }

    fn record_signal(&mut self) {
        for s in 0..self.duration() {
            self.kpi_signal[s as usize] = self.signal(s);
        }
    }

    fn wait_block(call: Option<(EventKind, EventKind)>, wait: u64) -> Step {
        Step::Block {
            call,
            state: TaskState::Interruptible,
            iowait: false,
            wait,
            rq: 0,
        }
    }

    fn pipe_call(bri: Bri) -> (EventKind, EventKind) {
        (EventKind::FifoIoEnter { bri }, EventKind::FifoIoExit)
    }

    fn recv_call(bri: Bri, endpoint: &SocketEndpoint) -> (EventKind, EventKind) {
        (
            EventKind::SockRecvEnter {
                bri,
                endpoint: endpoint.clone(),
            },
            EventKind::SockRecvExit,
        )
    }

    fn futex_wait(uaddr: u64) -> (EventKind, EventKind) {
        (
            EventKind::FutexEnter {
                op: futex_op::WAIT | futex_op::PRIVATE_FLAG,
                uaddr,
            },
            EventKind::FutexExit { ret: 0 },
        )
    }

    /// Client-facing connection of a target entry thread.
    fn client_endpoint(i: u32) -> SocketEndpoint {
        SocketEndpoint::inet(
            6,
            ("10.0.0.10", 8080),
            (
                &format!("10.0.5.{}", i % 250 + 1),
                52000 + (i % 1000) as u16,
            ),
        )
    }

    fn lock_contention(&mut self) {
        let tgid = 1000;
        let uaddr = 0x7f3a_5c01_2f30;
        let futex = Resource::Futex(FutexRef { tgid, uaddr });
        let work_pipe = pipe(2159682);
        let client = socket(51_000);
        let client_ep = Self::client_endpoint(0);
        self.truth.target_tgids = vec![tgid];

        let mut acceptor = Timeline::new(tgid, tgid, "acceptor");
        let mut holder = Timeline::new(tgid, tgid + 1, "worker-0");
        let mut waiters: Vec<Timeline> = (1..self.spec.threads)
            .map(|i| Timeline::new(tgid, tgid + 1 + i, &format!("worker-{i}")))
            .collect();

        for s in 0..self.duration() {
            let sig = self.signal(s);

            // The acceptor hands requests to the workers over a pipe, which
            // backs up once workers stall on the lock.
            let mut steps = self.preemptions();
            let recv_total = ns(0.12 * self.jitter());
            steps.extend(self.split(recv_total, 4, |w, _| {
                Self::wait_block(Some(Self::recv_call(client, &client_ep)), w)
            }));
            let pipe_total = ns((0.04 + 0.5 * sig) * self.jitter());
            steps.extend(self.split(pipe_total, 4, |w, _| {
                Self::wait_block(Some(Self::pipe_call(work_pipe)), w)
            }));
            let steps = self.shuffle(steps);
            acceptor.second(s, steps);

            // The holder sleeps between critical sections and wakes one
            // waiter each time it releases the lock.
            let mut steps = self.preemptions();
            let wakes = 6 + (10.0 * sig).round() as u64;
            for _ in 0..wakes {
                steps.push(Step::Call {
                    enter: EventKind::FutexEnter {
                        op: futex_op::WAKE | futex_op::PRIVATE_FLAG,
                        uaddr,
                    },
                    exit: EventKind::FutexExit { ret: 1 },
                    dur: self.rng.random_range(1_000..5_000),
                });
            }
            let nap = ns(0.3 * self.jitter());
            steps.extend(self.split(nap, 3, |w, _| Self::wait_block(None, w)));
            let steps = self.shuffle(steps);
            holder.second(s, steps);

            for w in waiters.iter_mut() {
                let mut steps = self.preemptions();
                let lock_total = ns((0.01 + 0.69 * sig) * self.jitter());
                steps.extend(self.split(lock_total, 5, |w, _| {
                    Self::wait_block(Some(Self::futex_wait(uaddr)), w)
                }));
                let read_total = ns((0.2 - 0.15 * sig) * self.jitter());
                steps.extend(self.split(read_total, 3, |w, _| {
                    Self::wait_block(Some(Self::pipe_call(work_pipe)), w)
                }));
                let steps = self.shuffle(steps);
                w.second(s, steps);
            }
        }

        let fres = futex.to_string();
        self.truth.flagged.push(TruthItem {
            tgid,
            tid: acceptor.tid,
            res: work_pipe.canonical(),
            metric: MetricKind::PipeWaitTime,
        });
        for w in &waiters {
            self.truth.flagged.push(TruthItem {
                tgid,
                tid: w.tid,
                res: fres.clone(),
                metric: MetricKind::FutexWaitTime,
            });
            self.truth.edges.push(ExpectedEdge {
                from: acceptor.key(),
                to: w.key(),
                res: work_pipe.canonical(),
                mechanism: "pipe".into(),
            });
            self.truth.edges.push(ExpectedEdge {
                from: w.key(),
                to: holder.key(),
                res: fres.clone(),
                mechanism: "futex".into(),
            });
            self.truth.reachable.push(w.key());
        }
        self.truth.reachable.push(holder.key());
        self.record_signal();
        self.threads.push(acceptor);
        self.threads.push(holder);
        self.threads.extend(waiters);
    }

    fn external_dependency(&mut self) {
        let target = 2000;
        let peer = 3000;
        let db_port = 5432;
        let device = DeviceRef::new(259, 0);
        self.truth.target_tgids = vec![target];
        let mut entries = Vec::new();
        let mut backends = Vec::new();
        let n = self.spec.threads;
        for i in 0..n {
            entries.push(Timeline::new(target, target + i, &format!("http-{i}")));
            backends.push(Timeline::new(peer, peer + i, &format!("persist-{i}")));
        }
        let conn_ep = |i: u32| {
            SocketEndpoint::inet(6, ("10.0.0.10", 41000 + i as u16), ("10.0.0.20", db_port))
        };
        for s in 0..self.duration() {
            let sig = self.signal(s);
            for i in 0..n as usize {
                let client = socket(60_000 + i as u64);
                let client_ep = Self::client_endpoint(i as u32);
                let conn = socket(70_000 + i as u64);
                let ep = conn_ep(i as u32);

                let mut steps = self.preemptions();
                let recv_total = ns(0.06 * self.jitter());
                steps.extend(self.split(recv_total, 3, |w, _| {
                    Self::wait_block(Some(Self::recv_call(client, &client_ep)), w)
                }));
                let db_total = ns((0.03 + 0.75 * sig) * self.jitter());
                steps.extend(self.split(db_total, 4, |w, _| {
                    Self::wait_block(Some(Self::recv_call(conn, &ep)), w)
                }));
                let steps = self.shuffle(steps);
                entries[i].second(s, steps);

                // The backend stalls on its disk; it spends less time waiting
                // for requests as a result.
                let back = socket(90_000 + i as u64);
                let back_ep = ep.mirrored();
                let mut steps = self.preemptions();
                let idle_total = ns((0.5 - 0.4 * sig) * self.jitter());
                steps.extend(self.split(idle_total, 4, |w, _| {
                    Self::wait_block(Some(Self::recv_call(back, &back_ep)), w)
                }));
                let stall_total = ns((0.02 + 0.6 * sig) * self.jitter());
                steps.extend(self.split(stall_total, 4, |w, rng| Step::Block {
                    call: None,
                    state: TaskState::Uninterruptible,
                    iowait: true,
                    wait: w,
                    rq: rng.random_range(0..200_000),
                }));
                steps.push(Step::Disk {
                    device,
                    sectors: 8 * self.rng.random_range(1..64),
                });
                let steps = self.shuffle(steps);
                backends[i].second(s, steps);
            }
        }
        for i in 0..n as usize {
            let conn = socket(70_000 + i as u64).canonical();
            self.truth.flagged.push(TruthItem {
                tgid: target,
                tid: entries[i].tid,
                res: conn.clone(),
                metric: MetricKind::SocketWaitTime,
            });
            self.truth.flagged.push(TruthItem {
                tgid: peer,
                tid: backends[i].tid,
                res: String::new(),
                metric: MetricKind::BlockTime,
            });
            self.truth.edges.push(ExpectedEdge {
                from: entries[i].key(),
                to: backends[i].key(),
                res: conn,
                mechanism: "socket".into(),
            });
            self.truth.reachable.push(backends[i].key());
        }
        self.record_signal();
        self.threads.extend(entries);
        self.threads.extend(backends);
    }

    fn cpu_contention(&mut self) {
        let tgid = 4000;
        self.truth.target_tgids = vec![tgid];
        let mut tls: Vec<Timeline> = (0..self.spec.threads)
            .map(|i| Timeline::new(tgid, tgid + i, &format!("compute-{i}")))
            .collect();
        let client = socket(40_000);
        let client_ep = Self::client_endpoint(0);
        for s in 0..self.duration() {
            let sig = self.signal(s);
            for (i, tl) in tls.iter_mut().enumerate() {
                let mut steps = Vec::new();
                let rq_total = ns((0.02 + 0.6 * sig) * self.jitter());
                steps.extend(self.split(rq_total, 6, |rq, _| Step::Preempt { rq }));
                let nap = ns(0.15 * self.jitter());
                if i == 0 {
                    steps.extend(self.split(nap, 3, |w, _| {
                        Self::wait_block(Some(Self::recv_call(client, &client_ep)), w)
                    }));
                } else {
                    steps.extend(self.split(nap, 3, |w, _| Self::wait_block(None, w)));
                }
                let steps = self.shuffle(steps);
                tl.second(s, steps);
            }
        }
        for tl in &tls {
            self.truth.flagged.push(TruthItem {
                tgid,
                tid: tl.tid,
                res: String::new(),
                metric: MetricKind::RqTime,
            });
        }
        self.record_signal();
        self.threads.extend(tls);
    }

    fn disk_contention(&mut self) {
        let tgid = 5000;
        let noisy = 5100;
        let device = DeviceRef::new(259, 0);
        self.truth.target_tgids = vec![tgid];
        self.truth.device = Some(device);
        let mut writers: Vec<Timeline> = (0..self.spec.threads)
            .map(|i| Timeline::new(tgid, tgid + i, &format!("writer-{i}")))
            .collect();
        let mut hog = Timeline::new(noisy, noisy, "backup");
        let client = socket(50_000);
        let client_ep = Self::client_endpoint(0);
        let (a, b) = (self.duration() / 4, 3 * self.duration() / 4);
        for s in 0..self.duration() {
            let sig = self.signal(s);
            let during = s >= a && s < b;
            // Target share is exactly 0.80 outside the window, 0.34 inside.
            let scale = 8 * self.rng.random_range(1..=4u64);
            let (mine, theirs) = if during { (34, 66) } else { (80, 20) };
            let mine_total = mine * scale;
            let theirs_total = theirs * scale;
            self.truth.device_share.push((
                EPOCH_WALL_S + s,
                mine_total as f64 / (mine_total + theirs_total) as f64,
            ));

            let n = writers.len() as u64;
            for (i, tl) in writers.iter_mut().enumerate() {
                let mut steps = self.preemptions();
                let io_total = ns((0.05 + 0.5 * sig) * self.jitter());
                steps.extend(self.split(io_total, 4, |w, _| Step::Block {
                    call: None,
                    state: TaskState::Uninterruptible,
                    iowait: true,
                    wait: w,
                    rq: 0,
                }));
                if i == 0 {
                    let recv = ns(0.1 * self.jitter());
                    steps.extend(self.split(recv, 2, |w, _| {
                        Self::wait_block(Some(Self::recv_call(client, &client_ep)), w)
                    }));
                }
                let part = mine_total / n;
                let sectors = if i as u64 + 1 == n {
                    mine_total - part * (n - 1)
                } else {
                    part
                };
                if sectors > 0 {
                    steps.push(Step::Disk { device, sectors });
                }
                let steps = self.shuffle(steps);
                tl.second(s, steps);
            }
            let mut steps = self.preemptions();
            steps.extend(self.split(theirs_total, 2, |sectors, _| Step::Disk { device, sectors }));
            let bg = ns(0.4 * self.jitter());
            steps.extend(self.split(bg, 2, |w, _| Step::Block {
                call: None,
                state: TaskState::Uninterruptible,
                iowait: true,
                wait: w,
                rq: 0,
            }));
            let steps = self.shuffle(steps);
            hog.second(s, steps);
        }
        for tl in &writers {
            self.truth.flagged.push(TruthItem {
                tgid,
                tid: tl.tid,
                res: String::new(),
                metric: MetricKind::IowaitTime,
            });
        }
        self.record_signal();
        self.threads.extend(writers);
        self.threads.push(hog);
    }

    fn idle(&mut self) {
        let tgid = 6000;
        self.truth.target_tgids = vec![tgid];
        self.truth.intervention = (EPOCH_WALL_S, EPOCH_WALL_S);
        let mut tls: Vec<Timeline> = (0..self.spec.threads)
            .map(|i| Timeline::new(tgid, tgid + i, &format!("idle-{i}")))
            .collect();
        for s in 0..self.duration() {
            for tl in tls.iter_mut() {
                let total = ns(0.98 * self.rng.random_range(0.97..=1.0));
                let steps = self.split(total, 2, |w, _| Self::wait_block(None, w));
                tl.second(s, steps);
            }
        }
        self.threads.extend(tls);
    }

    /// Unstructured events over a small pool of shared resources, with
    /// mismatched calls, unknown operations and resource churn mixed in.
    fn random(&mut self) {
        self.truth.intervention = (EPOCH_WALL_S, EPOCH_WALL_S);
        let horizon = self.duration() * NS_PER_SEC;
        let pipes = [pipe(1), pipe(2)];
        let sockets = [
            (
                socket(11),
                SocketEndpoint::inet(6, ("10.1.0.1", 1000), ("10.1.0.2", 2000)),
            ),
            (
                Bri::from_inode(BriKind::SocketInet6, 8, 12).unwrap(),
                SocketEndpoint::inet6(17, ("fd00::1", 53), ("fd00::2", 5353)),
            ),
            (
                Bri::from_inode(BriKind::SocketUnix, 8, 13).unwrap(),
                SocketEndpoint::unix("/run/r.sock", "sock:13", "sock:14"),
            ),
            (
                socket(15),
                SocketEndpoint {
                    family: SocketFamily::Unsupported(16),
                    ..SocketEndpoint::inet(0, ("", 0), ("", 0))
                },
            ),
        ];
        let files = [
            Bri::from_inode(BriKind::RegularFile, 259, 100).unwrap(),
            Bri::from_inode(BriKind::RegularFile, 259, 101).unwrap(),
        ];
        let epolls = [
            Bri::from_epoll_object(0xffff_9a7a_3f5e_1740).unwrap(),
            Bri::from_epoll_object(0xffff_9a7a_3f5e_1a80).unwrap(),
        ];
        let uaddrs = [0x1000u64, 0x2000];
        let devices = [DeviceRef::new(259, 0), DeviceRef::new(8, 16)];
        let futex_ops = [
            futex_op::WAIT,
            futex_op::WAIT | futex_op::PRIVATE_FLAG,
            futex_op::WAIT_BITSET | futex_op::CLOCK_REALTIME,
            futex_op::LOCK_PI,
            futex_op::WAKE,
            futex_op::WAKE | futex_op::PRIVATE_FLAG,
            futex_op::UNLOCK_PI,
            futex_op::CMP_REQUEUE,
            futex_op::WAKE_OP,
            futex_op::FD,
        ];
        let all_bris: Vec<Bri> = pipes
            .iter()
            .copied()
            .chain(sockets.iter().map(|(b, _)| *b))
            .chain(files)
            .collect();

        for n in 0..self.spec.threads {
            let tgid = 1 + n % 2;
            let tid = 10 + n;
            let comm = if self.rng.random_bool(0.15) {
                String::new()
            } else {
                format!("r{tid}")
            };
            let count = self.rng.random_range(5..80);
            let mut times: Vec<u64> = (0..count)
                .map(|_| {
                    if self.rng.random_bool(0.15) {
                        // Land on or right next to an interval boundary.
                        let k = self.rng.random_range(0..self.duration());
                        let off = self.rng.random_range(0..=2u64);
                        (k * NS_PER_SEC + off).saturating_sub(1).min(horizon - 1)
                    } else {
                        self.rng.random_range(0..horizon)
                    }
                })
                .collect();
            times.sort_unstable();
            for t in times {
                let r = &mut self.rng;
                let kind = match r.random_range(0..26) {
                    0 | 1 => EventKind::SchedSwitchIn,
                    2 => EventKind::SchedSwitchOut {
                        prev_state: TaskState::Running,
                        iowait: false,
                    },
                    3 => EventKind::SchedSwitchOut {
                        prev_state: TaskState::Interruptible,
                        iowait: false,
                    },
                    4 => EventKind::SchedSwitchOut {
                        prev_state: TaskState::Uninterruptible,
                        iowait: r.random_bool(0.5),
                    },
                    5 | 6 => EventKind::SchedWakeup,
                    7 => EventKind::ThreadExit,
                    8 => EventKind::FifoIoEnter {
                        bri: pipes[r.random_range(0..2)],
                    },
                    9 => EventKind::FifoIoExit,
                    10 => {
                        let (bri, endpoint) = sockets[r.random_range(0..4)].clone();
                        EventKind::SockRecvEnter { bri, endpoint }
                    }
                    11 => EventKind::SockRecvExit,
                    12 => {
                        let (bri, endpoint) = sockets[r.random_range(0..4)].clone();
                        EventKind::SockSendEnter { bri, endpoint }
                    }
                    13 => EventKind::SockSendExit,
                    14 | 15 => EventKind::FutexEnter {
                        op: futex_ops[r.random_range(0..futex_ops.len())],
                        uaddr: uaddrs[r.random_range(0..2)],
                    },
                    16 => EventKind::FutexExit {
                        ret: r.random_range(-2..3),
                    },
                    17 => {
                        let k = r.random_range(1..5);
                        let bris = (0..k)
                            .map(|_| all_bris[r.random_range(0..all_bris.len())])
                            .collect();
                        EventKind::PollfamEnter { bris }
                    }
                    18 => EventKind::PollfamExit {
                        bris: vec![all_bris[r.random_range(0..all_bris.len())]],
                    },
                    19 | 20 => EventKind::EpollInsert {
                        epoll: epolls[r.random_range(0..2)],
                        target: all_bris[r.random_range(0..all_bris.len())],
                    },
                    21 => EventKind::EpollRemove {
                        epoll: epolls[r.random_range(0..2)],
                        target: all_bris[r.random_range(0..all_bris.len())],
                    },
                    22 => EventKind::EpollWaitEnter {
                        epoll: epolls[r.random_range(0..2)],
                    },
                    23 => EventKind::EpollWaitExit {
                        epoll: epolls[r.random_range(0..2)],
                    },
                    _ => EventKind::BlockRequest {
                        device: devices[r.random_range(0..2)],
                        sectors: r.random_range(0..64),
                    },
                };
                self.extra_events
                    .push(RawEvent::new(t, tgid, tid, comm.as_str(), kind));
            }
        }
    }

    fn finish(mut self) -> Generated {
        let mut events = std::mem::take(&mut self.extra_events);
        for tl in &mut self.threads {
            events.append(&mut tl.events);
        }
        // Stable: each thread's own order survives ties.
        events.sort_by_key(|e| (e.t_ns, e.tgid, e.tid));

        let kpi = (0..self.duration())
            .map(|s| {
                let base = 5.0 + 40.0 * self.kpi_signal[s as usize];
                (EPOCH_WALL_S + s, base * self.jitter())
            })
            .collect();
        self.truth.flagged.sort();
        self.truth.edges.sort();
        self.truth.reachable.sort();
        self.truth.reachable.dedup();
        Generated {
            trace: Trace {
                header: TraceHeader {
                    version: TRACE_VERSION.to_string(),
                    scenario: self.spec.kind.as_str().to_string(),
                    seed: self.spec.seed,
                    threads: self.spec.threads,
                    duration_s: self.spec.duration_s,
                    epoch_wall_s: EPOCH_WALL_S,
                },
                events,
            },
            kpi,
            truth: self.truth,
        }
    }
}
