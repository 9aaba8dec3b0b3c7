use std::collections::{BTreeMap, BTreeSet};

use kprism_core::{EndpointRecord, MetricKind, SocketEndpoint, Store};
use serde::{Deserialize, Serialize};

pub type ThreadKey = (u32, u32);

/// One per-second series: a thread's metric on one resource.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub tgid: u32,
    pub tid: u32,
    pub metric: MetricKind,
    /// Canonical resource string, empty for scheduler metrics.
    pub res: String,
}

impl SeriesKey {
    pub fn thread(&self) -> ThreadKey {
        (self.tgid, self.tid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ThreadInfo {
    pub tgid: u32,
    pub tid: u32,
    pub comm: String,
}

/// A loaded store organised by series.
#[derive(Debug, Clone, Default)]
pub struct MetricIndex {
    series: BTreeMap<SeriesKey, BTreeMap<u64, u64>>,
    comms: BTreeMap<ThreadKey, String>,
    endpoints: BTreeMap<String, EndpointRecord>,
    span: Option<(u64, u64)>,
    lossy: BTreeSet<u64>,
}

impl MetricIndex {
    pub fn new(store: &Store) -> Self {
        let mut index = MetricIndex {
            endpoints: store.endpoints.clone(),
            ..Default::default()
        };
        for r in &store.records {
            let key = SeriesKey {
                tgid: r.tgid,
                tid: r.tid,
                metric: r.metric,
                res: r.res.clone(),
            };
            let slot = index
                .series
                .entry(key)
                .or_default()
                .entry(r.ts)
                .or_insert(0);
            *slot = slot.saturating_add(r.val);
            let comm = index.comms.entry(r.thread()).or_default();
            if comm.is_empty() {
                comm.clone_from(&r.comm);
            }
            index.span = Some(match index.span {
                None => (r.ts, r.ts),
                Some((lo, hi)) => (lo.min(r.ts), hi.max(r.ts)),
            });
            if r.lossy {
                index.lossy.insert(r.ts);
            }
        }
        index
    }

    /// First and last wall second with any sample.
    pub fn span(&self) -> Option<(u64, u64)> {
        self.span
    }

    pub fn lossy_seconds(&self) -> &BTreeSet<u64> {
        &self.lossy
    }

    pub fn series(&self) -> impl Iterator<Item = (&SeriesKey, &BTreeMap<u64, u64>)> {
        self.series.iter()
    }

    /// Zero-filled values of one series at the given seconds.
    pub fn values(&self, key: &SeriesKey, seconds: &[u64]) -> Vec<f64> {
        let Some(points) = self.series.get(key) else {
            return vec![0.0; seconds.len()];
        };
        seconds
            .iter()
            .map(|s| points.get(s).copied().unwrap_or(0) as f64)
            .collect()
    }

    pub fn threads(&self) -> impl Iterator<Item = ThreadKey> + '_ {
        self.comms.keys().copied()
    }

    pub fn thread_info(&self, key: ThreadKey) -> ThreadInfo {
        ThreadInfo {
            tgid: key.0,
            tid: key.1,
            comm: self.comms.get(&key).cloned().unwrap_or_default(),
        }
    }

    pub fn endpoint(&self, res: &str) -> Option<SocketEndpoint> {
        self.endpoints.get(res).map(EndpointRecord::endpoint)
    }

    /// Series of `metric` on exactly `res`.
    pub fn series_on<'a>(
        &'a self,
        metric: MetricKind,
        res: &'a str,
    ) -> impl Iterator<Item = &'a SeriesKey> + 'a {
        self.series
            .keys()
            .filter(move |k| k.metric == metric && k.res == res)
    }

    /// Total of `metric` per resource over the whole store.
    pub fn resource_totals(&self, metric: MetricKind) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for (k, points) in &self.series {
            if k.metric == metric {
                let slot: &mut u64 = out.entry(k.res.clone()).or_default();
                *slot = points.values().fold(*slot, |a, v| a.saturating_add(*v));
            }
        }
        out
    }
}
