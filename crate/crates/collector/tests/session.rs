use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::time::Duration;

use kprism_collector::{
    resolve_target, AttachReport, CollectError, DiscoveryRecord, LossyPolicy, ManualClock,
    ProbeBackend, ProcFs, ScopeReason, ScopeState, Session, SessionConfig, SimulatedKernel,
    Summary, Target, WireKey, WireValue,
};
use kprism_core::{
    Bri, BriKind, EventKind, FutexRef, MetricKind, RawEvent, Resource, SocketEndpoint, Store,
    TaskState, NS_PER_SEC,
};
use kprism_replay::{generate, replay, ScenarioKind, ScenarioSpec};

const WALL: u64 = 1_700_000_000;

fn cfg(target: Target, duration_s: u64, out: &std::path::Path) -> SessionConfig {
    SessionConfig {
        target,
        duration_s,
        output_path: out.to_path_buf(),
        lossy_policy: LossyPolicy::Mark,
    }
}

fn table(entries: &[(u32, &str)]) -> Vec<(u32, String)> {
    entries.iter().map(|(t, c)| (*t, c.to_string())).collect()
}

fn ev(t: u64, tgid: u32, tid: u32, kind: EventKind) -> RawEvent {
    RawEvent::new(t, tgid, tid, "", kind)
}

#[test]
fn target_by_tgid_seeds_exactly_that_tgid() {
    let procs = table(&[(1, "init"), (1234, "nginx")]);
    let got = resolve_target(&procs, &Target::Tgid(1234)).unwrap();
    assert_eq!(got, BTreeSet::from([1234]));
    assert!(matches!(
        resolve_target(&procs, &Target::Tgid(99)),
        Err(CollectError::TargetNotFound(_))
    ));
}

#[test]
fn command_name_seeds_every_match_from_procfs() {
    let root = tempfile::tempdir().unwrap();
    for (pid, comm) in [
        (1, "systemd"),
        (410, "mysqld"),
        (977, "mysqld"),
        (980, "bash"),
    ] {
        let d = root.path().join(pid.to_string());
        fs::create_dir(&d).unwrap();
        fs::write(d.join("comm"), format!("{comm}\n")).unwrap();
    }
    fs::create_dir(root.path().join("self")).unwrap();
    let procfs = ProcFs {
        root: root.path().to_path_buf(),
    };
    let got = resolve_target(&procfs, &Target::Comm("mysqld".into())).unwrap();
    assert_eq!(got, BTreeSet::from([410, 977]));

    let out = root.path().join("m.ndjson");
    let session = Session::start(
        cfg(Target::Comm("mysqld".into()), 1, &out),
        &procfs,
        SimulatedKernel::new(Vec::new(), 1),
        ManualClock::new(WALL),
    )
    .unwrap();
    assert_eq!(session.scope().members(), &BTreeSet::from([410, 977]));
    assert!(session
        .scope()
        .discovery_log()
        .iter()
        .all(|e| e.reason == ScopeReason::Initial));
}

#[test]
fn long_command_names_match_truncated_task_names() {
    let procs = table(&[(5, "postgres-backgr")]);
    let got = resolve_target(&procs, &Target::Comm("postgres-background-writer".into())).unwrap();
    assert_eq!(got, BTreeSet::from([5]));
}

#[test]
fn zero_duration_rejected_before_attaching() {
    let dir = tempfile::tempdir().unwrap();
    let err = Session::start(
        cfg(Target::Tgid(1), 0, &dir.path().join("x")),
        &table(&[(1, "a")]),
        SimulatedKernel::new(Vec::new(), 1),
        ManualClock::new(WALL),
    )
    .err()
    .unwrap();
    assert!(matches!(err, CollectError::Config(_)));
}

fn unix_pair(a: u32, b: u32) -> [DiscoveryRecord; 2] {
    let end = |tgid, ino, peer| DiscoveryRecord::Socket {
        tgid,
        tid: tgid,
        ts_ns: 10,
        bri: Bri::from_inode(BriKind::SocketUnix, 8, ino).unwrap(),
        endpoint: SocketEndpoint::unix(
            "/run/app.sock",
            &format!("sock:{ino}"),
            &format!("sock:{peer}"),
        ),
    };
    [end(a, 300, 301), end(b, 301, 300)]
}

#[test]
fn unix_socket_pair_pulls_in_peer() {
    let mut scope = ScopeState::new(&BTreeSet::from([100]), 0);
    let [a, b] = unix_pair(100, 200);
    assert!(scope.observe(&a).is_empty());
    let joined = scope.observe(&b);
    assert_eq!(joined.len(), 1);
    assert_eq!(joined[0].tgid, 200);
    assert_eq!(joined[0].reason, ScopeReason::SocketPeer);
    assert_eq!(scope.members(), &BTreeSet::from([100, 200]));
}

#[test]
fn non_members_talking_changes_nothing() {
    let mut scope = ScopeState::new(&BTreeSet::from([100]), 0);
    for rec in unix_pair(300, 400) {
        assert!(scope.observe(&rec).is_empty());
    }
    let pipe = Bri::from_inode(BriKind::Pipe, 14, 9).unwrap();
    for tgid in [300, 400] {
        let rec = DiscoveryRecord::Pipe {
            tgid,
            tid: tgid,
            ts_ns: 1,
            bri: pipe,
        };
        assert!(scope.observe(&rec).is_empty());
    }
    assert_eq!(scope.members(), &BTreeSet::from([100]));
}

#[test]
fn membership_only_grows_and_seeds_stay() {
    let mut scope = ScopeState::new(&BTreeSet::from([1, 2]), 0);
    let pipe = Bri::from_inode(BriKind::Pipe, 14, 9).unwrap();
    let mut before = scope.members().clone();
    for (i, tgid) in [3u32, 1, 4, 3, 2].into_iter().enumerate() {
        scope.observe(&DiscoveryRecord::Pipe {
            tgid,
            tid: tgid,
            ts_ns: i as u64,
            bri: pipe,
        });
        assert!(scope.members().is_superset(&before));
        before = scope.members().clone();
    }
    assert_eq!(scope.members(), &BTreeSet::from([1, 2, 3, 4]));
}

/// A (member) shares a pipe with B in the first second; B talks to C over a
/// TCP connection in the second.
fn chain_events() -> Vec<RawEvent> {
    let pipe = Bri::from_inode(BriKind::Pipe, 14, 77).unwrap();
    let sock_b = Bri::from_inode(BriKind::SocketInet, 8, 501).unwrap();
    let sock_c = Bri::from_inode(BriKind::SocketInet, 8, 502).unwrap();
    let ep_b = SocketEndpoint::inet(6, ("10.0.0.2", 40000), ("10.0.0.3", 6379));
    let ep_c = ep_b.mirrored();
    let s = NS_PER_SEC;
    let mut v = Vec::new();
    for (t, tgid, kind) in [
        (100, 10, EventKind::FifoIoEnter { bri: pipe }),
        (200, 20, EventKind::FifoIoEnter { bri: pipe }),
        (300, 10, EventKind::FifoIoExit),
        (400, 20, EventKind::FifoIoExit),
        (
            s + 100,
            20,
            EventKind::SockSendEnter {
                bri: sock_b,
                endpoint: ep_b.clone(),
            },
        ),
        (s + 150, 20, EventKind::SockSendExit),
        (
            s + 200,
            30,
            EventKind::SockRecvEnter {
                bri: sock_c,
                endpoint: ep_c.clone(),
            },
        ),
        (s + 900, 30, EventKind::SockRecvExit),
        (
            2 * s + 100,
            30,
            EventKind::SockRecvEnter {
                bri: sock_c,
                endpoint: ep_c.clone(),
            },
        ),
        (2 * s + 900, 30, EventKind::SockRecvExit),
    ] {
        v.push(ev(t, tgid, tgid, kind));
    }
    v
}

#[test]
fn scope_grows_transitively_across_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let mut session = Session::start(
        cfg(Target::Tgid(10), 3, &dir.path().join("c")),
        &table(&[(10, "a"), (20, "b"), (30, "c")]),
        SimulatedKernel::new(chain_events(), 3),
        ManualClock::new(WALL),
    )
    .unwrap();
    let t0 = session.tick().unwrap();
    assert_eq!(
        t0.joined
            .iter()
            .map(|e| (e.tgid, e.reason))
            .collect::<Vec<_>>(),
        vec![(20, ScopeReason::PipePeer)]
    );
    let t1 = session.tick().unwrap();
    assert_eq!(
        t1.joined
            .iter()
            .map(|e| (e.tgid, e.reason))
            .collect::<Vec<_>>(),
        vec![(30, ScopeReason::SocketPeer)]
    );
    // C joined during interval 1, so its waits count from interval 2 on.
    assert!(t1.samples.iter().all(|s| s.subject.tgid != 30));
    let t2 = session.tick().unwrap();
    assert!(t2
        .samples
        .iter()
        .any(|s| s.subject.tgid == 30 && s.kind == MetricKind::SocketWaitTime && s.value == 800));
    assert_eq!(session.scope().members(), &BTreeSet::from([10, 20, 30]));
}

#[test]
fn no_activity_emits_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut session = Session::start(
        cfg(Target::Tgid(10), 2, &dir.path().join("e")),
        &table(&[(10, "a")]),
        SimulatedKernel::new(Vec::new(), 2),
        ManualClock::new(WALL),
    )
    .unwrap();
    let iv = session.tick().unwrap();
    assert!(iv.samples.is_empty() && iv.endpoints.is_empty() && !iv.lossy);
}

#[test]
fn accumulator_delta_becomes_one_sample() {
    let uaddr = 0x7f00;
    let events = vec![
        ev(0, 10, 11, EventKind::FutexEnter { op: 0, uaddr }),
        ev(300_000_000, 10, 11, EventKind::FutexExit { ret: 0 }),
    ];
    let mut kernel = SimulatedKernel::new(events, 1);
    let key = WireKey::new(
        10,
        11,
        MetricKind::FutexWaitTime,
        Some(&Resource::Futex(FutexRef { tgid: 10, uaddr })),
    );
    // Left over from before the session: must not leak into the first delta.
    kernel.preload(
        key,
        WireValue {
            time_ns: 5_000_000_000,
            count: 40,
        },
    );
    let dir = tempfile::tempdir().unwrap();
    let mut session = Session::start(
        cfg(Target::Tgid(10), 1, &dir.path().join("f")),
        &table(&[(10, "db")]),
        kernel,
        ManualClock::new(WALL),
    )
    .unwrap();
    let iv = session.tick().unwrap();
    let futex: Vec<_> = iv
        .samples
        .iter()
        .filter(|s| s.kind == MetricKind::FutexWaitTime)
        .collect();
    assert_eq!(futex.len(), 1);
    assert_eq!(futex[0].value, 300_000_000);
    assert_eq!(futex[0].resource_string(), "10:0x7f00");
    let counts: Vec<_> = iv
        .samples
        .iter()
        .filter(|s| s.kind == MetricKind::FutexWaitCount)
        .map(|s| s.value)
        .collect();
    assert_eq!(counts, vec![1]);
}

fn run_scenario(
    kind: ScenarioKind,
    threads: u32,
    duration_s: u64,
    target: u32,
    setup: impl FnOnce(&mut SimulatedKernel),
    policy: LossyPolicy,
) -> (
    Result<kprism_collector::SessionReport, CollectError>,
    Store,
    kprism_replay::Generated,
) {
    let g = generate(&ScenarioSpec {
        kind,
        threads,
        duration_s,
        seed: 7,
    })
    .unwrap();
    let mut kernel = SimulatedKernel::new(g.trace.events.clone(), duration_s);
    setup(&mut kernel);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("store.ndjson");
    let mut config = cfg(Target::Tgid(target), duration_s, &out);
    config.lossy_policy = policy;
    let session = Session::start(
        config,
        &table(&[(target, "app")]),
        kernel,
        ManualClock::new(WALL),
    )
    .unwrap();
    let report = session.run();
    let store = Store::open(&out).unwrap();
    (report, store, g)
}

#[test]
fn live_path_matches_replay_for_in_scope_threads() {
    let (report, store, g) = run_scenario(
        ScenarioKind::LockContention,
        4,
        30,
        1000,
        |_| {},
        LossyPolicy::Mark,
    );
    let report = report.unwrap();
    assert_eq!(report.intervals, 30);
    assert!(report.lossy_intervals.is_empty());
    let (samples, _) = replay(&g.trace).unwrap();
    let want: Vec<_> = samples
        .iter()
        .filter(|s| s.subject.tgid == 1000 || s.kind.is_global_scope())
        .map(|s| {
            (
                s.interval_s,
                s.subject.key(),
                s.kind,
                s.resource_string(),
                s.value,
            )
        })
        .collect();
    let got: Vec<_> = store
        .records
        .iter()
        .map(|r| (r.iv, (r.tgid, r.tid), r.metric, r.res.clone(), r.val))
        .collect();
    assert_eq!(got, want);
    assert!(store.records.iter().all(|r| r.ts == WALL + r.iv));
    assert!(store
        .records
        .iter()
        .any(|r| r.tid == 1001 && r.comm == "worker-0"));
    // The acceptor's client socket is described before it is referenced.
    assert!(store
        .endpoints
        .values()
        .any(|e| e.dport != 0 || e.sport != 0));
}

#[test]
fn differencing_sums_to_final_minus_initial() {
    let mut finals = BTreeMap::new();
    let g = generate(&ScenarioSpec {
        kind: ScenarioKind::Random,
        threads: 6,
        duration_s: 12,
        seed: 3,
    })
    .unwrap();
    let mut kernel = SimulatedKernel::new(g.trace.events.clone(), 12);
    let preload = WireKey::new(1, 10, MetricKind::Runtime, None);
    kernel.preload(
        preload,
        WireValue {
            time_ns: 123_456,
            count: 0,
        },
    );
    let dir = tempfile::tempdir().unwrap();
    let mut session = Session::start(
        cfg(Target::Tgid(1), 12, &dir.path().join("d")),
        &table(&[(1, "r")]),
        &mut kernel,
        ManualClock::new(WALL),
    )
    .unwrap();
    let mut emitted: BTreeMap<(u32, u32, MetricKind, String), u64> = BTreeMap::new();
    for _ in 0..12 {
        for s in session.tick().unwrap().samples {
            *emitted
                .entry((s.subject.tgid, s.subject.tid, s.kind, s.resource_string()))
                .or_default() += s.value;
        }
    }
    drop(session);
    for (key, v) in kernel.totals() {
        let (time, count) = kprism_collector::wire::class_metrics(key.class).unwrap();
        let res = key
            .resource()
            .unwrap()
            .map(|r| r.to_string())
            .unwrap_or_default();
        let base = if *key == preload { 123_456 } else { 0 };
        if let Some(m) = time {
            finals.insert((key.tgid, key.tid, m, res.clone()), v.time_ns - base);
        }
        if let Some(m) = count {
            finals.insert((key.tgid, key.tid, m, res.clone()), v.count);
        }
    }
    finals.retain(|_, v| *v != 0);
    assert_eq!(emitted, finals);
}

#[test]
fn forced_overflow_marks_only_that_interval() {
    let (report, store, _) = run_scenario(
        ScenarioKind::LockContention,
        3,
        10,
        1000,
        |k| k.force_overflow(3, 5),
        LossyPolicy::Mark,
    );
    assert_eq!(report.unwrap().lossy_intervals, vec![3]);
    let lossy: BTreeSet<u64> = store
        .records
        .iter()
        .filter(|r| r.lossy)
        .map(|r| r.iv)
        .collect();
    assert_eq!(lossy, BTreeSet::from([3]));
    assert!(store.records.iter().any(|r| r.iv == 4));
}

#[test]
fn overflow_with_abort_policy_keeps_earlier_intervals() {
    let (report, store, _) = run_scenario(
        ScenarioKind::LockContention,
        3,
        10,
        1000,
        |k| k.force_overflow(3, 5),
        LossyPolicy::Abort,
    );
    assert!(matches!(
        report,
        Err(CollectError::Overflow {
            interval: 3,
            dropped: 5
        })
    ));
    let ivs: BTreeSet<u64> = store.records.iter().map(|r| r.iv).collect();
    assert_eq!(ivs, BTreeSet::from([0, 1, 2]));
}

#[test]
fn read_failure_aborts_with_partial_data_flushed() {
    let (report, store, _) = run_scenario(
        ScenarioKind::LockContention,
        3,
        10,
        1000,
        |k| k.fail_at(5),
        LossyPolicy::Mark,
    );
    assert!(matches!(report, Err(CollectError::Backend(_))));
    let ivs: BTreeSet<u64> = store.records.iter().map(|r| r.iv).collect();
    assert_eq!(ivs, (0..5).collect());
}

#[test]
fn sector_count_is_global_everything_else_is_scoped() {
    let (report, store, g) = run_scenario(
        ScenarioKind::DiskContention,
        2,
        20,
        5000,
        |_| {},
        LossyPolicy::Mark,
    );
    report.unwrap();
    assert!(g.truth.target_tgids.contains(&5000));
    let foreign: Vec<_> = store.records.iter().filter(|r| r.tgid != 5000).collect();
    assert!(!foreign.is_empty(), "the hog's disk traffic is recorded");
    assert!(foreign.iter().all(|r| r.metric == MetricKind::SectorCount));
}

#[test]
fn external_peer_joins_through_mirrored_socket() {
    let (report, store, _) = run_scenario(
        ScenarioKind::ExternalDependency,
        2,
        20,
        2000,
        |_| {},
        LossyPolicy::Mark,
    );
    let report = report.unwrap();
    let joined: Vec<_> = report
        .scope
        .iter()
        .filter(|e| e.reason != ScopeReason::Initial)
        .map(|e| (e.tgid, e.reason))
        .collect();
    assert_eq!(joined, vec![(3000, ScopeReason::SocketPeer)]);
    let first_peer_iv = store
        .records
        .iter()
        .filter(|r| r.tgid == 3000 && r.metric != MetricKind::SectorCount)
        .map(|r| r.iv)
        .min();
    assert_eq!(first_peer_iv, Some(1));
    assert!(store
        .records
        .iter()
        .any(|r| r.tgid == 3000 && r.metric == MetricKind::BlockTime));
}

#[test]
fn ticks_follow_the_session_start_epoch() {
    let clock = ManualClock::new(WALL);
    clock.advance(Duration::from_millis(250));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let session = Session::start(
        cfg(Target::Tgid(10), 4, &out),
        &table(&[(10, "a")]),
        SimulatedKernel::new(Vec::new(), 4),
        &clock,
    )
    .unwrap();
    session.run().unwrap();
    use kprism_collector::Clock;
    assert_eq!(clock.monotonic(), Duration::from_millis(4250));
}

/// Hands out a fixed sequence of snapshots.
struct Scripted(Vec<Summary>);

impl ProbeBackend for Scripted {
    fn attach(&mut self, _: &BTreeSet<u32>) -> Result<AttachReport, CollectError> {
        Ok(AttachReport::default())
    }

    fn add_scope_member(&mut self, _: u32) -> Result<(), CollectError> {
        Ok(())
    }

    fn read_summaries(&mut self) -> Result<Summary, CollectError> {
        Ok(self.0.remove(0))
    }
}

#[test]
fn shrinking_accumulator_is_an_error() {
    let key = WireKey::new(10, 10, MetricKind::SleepTime, None);
    let snap = |t| Summary {
        entries: vec![(
            key,
            WireValue {
                time_ns: t,
                count: 0,
            },
        )],
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut session = Session::start(
        cfg(Target::Tgid(10), 2, &dir.path().join("s")),
        &table(&[(10, "a")]),
        Scripted(vec![snap(100), snap(400), snap(300)]),
        ManualClock::new(WALL),
    )
    .unwrap();
    assert_eq!(session.tick().unwrap().samples[0].value, 300);
    assert!(matches!(session.tick(), Err(CollectError::Backend(_))));
}

#[test]
fn scheduler_state_survives_the_wire() {
    let s = NS_PER_SEC;
    let events = vec![
        ev(0, 10, 10, EventKind::SchedSwitchIn),
        ev(
            s / 2,
            10,
            10,
            EventKind::SchedSwitchOut {
                prev_state: TaskState::Uninterruptible,
                iowait: true,
            },
        ),
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut session = Session::start(
        cfg(Target::Tgid(10), 1, &dir.path().join("w")),
        &table(&[(10, "a")]),
        SimulatedKernel::new(events, 1),
        ManualClock::new(WALL),
    )
    .unwrap();
    let iv = session.tick().unwrap();
    let got: Vec<_> = iv.samples.iter().map(|s| (s.kind, s.value)).collect();
    assert_eq!(
        got,
        vec![
            (MetricKind::Runtime, s / 2),
            (MetricKind::BlockTime, s / 2),
            (MetricKind::IowaitTime, s / 2),
        ]
    );
}
