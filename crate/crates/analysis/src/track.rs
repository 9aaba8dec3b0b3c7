use std::collections::{BTreeMap, BTreeSet};

use kprism_core::MetricKind;
use serde::{Deserialize, Serialize};

use crate::flag::{analysis_seconds, flag_candidates_where, rank, AnalysisError, Candidate};
use crate::index::{MetricIndex, SeriesKey, ThreadInfo, ThreadKey};
use crate::kpi::KpiSeries;

pub const REPORT_SCHEMA: &str = "kprism.tracking_report/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Futex,
    Pipe,
    Socket,
    Epoll,
}

/// A thread sharing a resource with a candidate's subject.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Counterpart {
    pub thread: ThreadKey,
    /// The resource as it appears in the counterpart's own samples. Differs
    /// from the candidate's for the two ends of a socket connection.
    pub resource: String,
    pub mechanism: Mechanism,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: ThreadInfo,
    pub to: ThreadInfo,
    pub resource: String,
    pub peer_resource: String,
    pub mechanism: Mechanism,
    /// The flagged metric on `from` that produced the edge.
    pub metric: MetricKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub schema: String,
    pub threshold: f64,
    pub window: (u64, u64),
    pub seconds: usize,
    pub lossy_seconds: Vec<u64>,
    pub entrypoints: Vec<ThreadInfo>,
    pub iterations: usize,
    /// Threads added by each iteration.
    pub frontier_history: Vec<Vec<ThreadInfo>>,
    pub tracked: Vec<ThreadInfo>,
    pub candidates: Vec<Candidate>,
    pub edges: Vec<Edge>,
}

/// Threads that talk to the outside world over IPv4/IPv6 sockets.
pub fn detect_entrypoints(index: &MetricIndex) -> BTreeSet<ThreadKey> {
    index
        .series()
        .filter(|(k, _)| {
            matches!(
                k.metric,
                MetricKind::SocketWaitTime | MetricKind::SocketWaitCount
            )
        })
        .filter(|(k, _)| index.endpoint(&k.res).is_some_and(|ep| ep.family.is_ip()))
        .map(|(k, _)| k.thread())
        .collect()
}

fn split_epoll_file(res: &str) -> Option<(&str, &str)> {
    res.split_once('\u{2192}')
}

/// Threads other than the candidate's subject that share its resource.
pub fn counterpart_threads(
    candidate: &Candidate,
    index: &MetricIndex,
) -> Result<BTreeSet<Counterpart>, AnalysisError> {
    let res = candidate.resource.clone().unwrap_or_default();
    let subject = candidate.thread();
    let mut out = BTreeSet::new();
    let mut add = |k: &SeriesKey, mechanism| {
        if k.thread() != subject {
            out.insert(Counterpart {
                thread: k.thread(),
                resource: k.res.clone(),
                mechanism,
            });
        }
    };
    // Any wait on a file BRI through an epoll also counts as using the file.
    let via_epoll = |file: &str| -> Vec<SeriesKey> {
        index
            .series()
            .filter(|(k, _)| {
                k.metric == MetricKind::EpollFileWait
                    && split_epoll_file(&k.res).is_some_and(|(_, f)| f == file)
            })
            .map(|(k, _)| k.clone())
            .collect()
    };
    match candidate.metric {
        MetricKind::FutexWaitTime | MetricKind::FutexWaitCount => {
            for k in index.series_on(MetricKind::FutexWakeCount, &res) {
                add(k, Mechanism::Futex);
            }
        }
        MetricKind::FutexWakeCount => {
            for m in [MetricKind::FutexWaitTime, MetricKind::FutexWaitCount] {
                for k in index.series_on(m, &res) {
                    add(k, Mechanism::Futex);
                }
            }
        }
        MetricKind::PipeWaitTime | MetricKind::PipeWaitCount => {
            for m in [MetricKind::PipeWaitTime, MetricKind::PipeWaitCount] {
                for k in index.series_on(m, &res) {
                    add(k, Mechanism::Pipe);
                }
            }
            for k in via_epoll(&res) {
                add(&k, Mechanism::Pipe);
            }
        }
        MetricKind::SocketWaitTime | MetricKind::SocketWaitCount => {
            let mine = index.endpoint(&res);
            for (k, _) in index.series() {
                if !matches!(
                    k.metric,
                    MetricKind::SocketWaitTime | MetricKind::SocketWaitCount
                ) {
                    continue;
                }
                let mirrored = match (&mine, index.endpoint(&k.res)) {
                    (Some(a), Some(b)) => a.mirrors(&b),
                    _ => false,
                };
                if k.res == res || mirrored {
                    add(k, Mechanism::Socket);
                }
            }
            for k in via_epoll(&res) {
                add(&k, Mechanism::Socket);
            }
        }
        MetricKind::EpollWaitTime | MetricKind::EpollWaitCount => {
            for (k, _) in index.series() {
                let same = match k.metric {
                    MetricKind::EpollWaitTime | MetricKind::EpollWaitCount => k.res == res,
                    MetricKind::EpollFileWait => {
                        split_epoll_file(&k.res).is_some_and(|(e, _)| e == res)
                    }
                    _ => false,
                };
                if same {
                    add(k, Mechanism::Epoll);
                }
            }
        }
        MetricKind::EpollFileWait => {
            let Some((epoll, file)) = split_epoll_file(&res) else {
                return Ok(out);
            };
            for (k, _) in index.series() {
                let same = match k.metric {
                    MetricKind::PipeWaitTime
                    | MetricKind::PipeWaitCount
                    | MetricKind::SocketWaitTime
                    | MetricKind::SocketWaitCount => k.res == file,
                    MetricKind::EpollWaitTime | MetricKind::EpollWaitCount => k.res == epoll,
                    MetricKind::EpollFileWait => {
                        split_epoll_file(&k.res).is_some_and(|(e, f)| e == epoll || f == file)
                    }
                    _ => false,
                };
                if same {
                    add(k, Mechanism::Epoll);
                }
            }
        }
        m => return Err(AnalysisError::NotIpc(m)),
    }
    Ok(out)
}

/// Grows a tracking list from the entrypoints: each iteration flags
/// candidates among newly tracked threads and adds the counterparts of
/// flagged communication metrics, until an iteration adds nobody.
pub fn track(
    index: &MetricIndex,
    kpi: &KpiSeries,
    threshold: f64,
    window: Option<(u64, u64)>,
) -> Result<TrackingReport, AnalysisError> {
    let seconds = analysis_seconds(index, kpi, window)?;
    let all = flag_candidates_where(index, kpi, threshold, window, |_| true)?;
    let mut by_thread: BTreeMap<ThreadKey, Vec<&Candidate>> = BTreeMap::new();
    for c in &all {
        by_thread.entry(c.thread()).or_default().push(c);
    }

    let entrypoints = detect_entrypoints(index);
    let mut tracked: BTreeSet<ThreadKey> = entrypoints.clone();
    let mut frontier: BTreeSet<ThreadKey> = entrypoints.clone();
    let mut history = Vec::new();
    let mut candidates = Vec::new();
    let mut edges = BTreeSet::new();
    while !frontier.is_empty() {
        let mut added = BTreeSet::new();
        for t in &frontier {
            for c in by_thread.get(t).into_iter().flatten() {
                candidates.push((*c).clone());
                if !c.metric.is_ipc() {
                    continue;
                }
                for peer in counterpart_threads(c, index)? {
                    edges.insert(Edge {
                        from: c.subject.clone(),
                        to: index.thread_info(peer.thread),
                        resource: c.resource.clone().unwrap_or_default(),
                        peer_resource: peer.resource,
                        mechanism: peer.mechanism,
                        metric: c.metric,
                    });
                    if tracked.insert(peer.thread) {
                        added.insert(peer.thread);
                    }
                }
            }
        }
        history.push(added.iter().map(|t| index.thread_info(*t)).collect());
        frontier = added;
    }
    rank(&mut candidates);

    let info = |set: &BTreeSet<ThreadKey>| set.iter().map(|t| index.thread_info(*t)).collect();
    Ok(TrackingReport {
        schema: REPORT_SCHEMA.to_string(),
        threshold,
        window: (seconds[0], seconds[seconds.len() - 1]),
        seconds: seconds.len(),
        lossy_seconds: index
            .lossy_seconds()
            .iter()
            .copied()
            .filter(|s| seconds.binary_search(s).is_ok())
            .collect(),
        entrypoints: info(&entrypoints),
        iterations: history.len(),
        frontier_history: history,
        tracked: info(&tracked),
        candidates,
        edges: edges.into_iter().collect(),
    })
}
