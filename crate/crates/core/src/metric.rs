use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Resource, ThreadRef};

pub const NS_PER_SEC: u64 = 1_000_000_000;

/// Interval index of a monotonic timestamp.
pub fn interval_of(t_ns: u64) -> u64 {
    t_ns / NS_PER_SEC
}

pub fn interval_start(interval: u64) -> u64 {
    interval.saturating_mul(NS_PER_SEC)
}

pub fn interval_end(interval: u64) -> u64 {
    interval.saturating_add(1).saturating_mul(NS_PER_SEC)
}

/// The sixteen per-second metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Runtime,
    RqTime,
    BlockTime,
    IowaitTime,
    SleepTime,
    PipeWaitTime,
    PipeWaitCount,
    SocketWaitTime,
    SocketWaitCount,
    SectorCount,
    EpollWaitTime,
    EpollWaitCount,
    EpollFileWait,
    FutexWaitTime,
    FutexWaitCount,
    FutexWakeCount,
}

/// Which resource shape a metric is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResourceShape {
    None,
    Bri,
    Futex,
    Device,
    EpollFile,
}

impl MetricKind {
    pub const ALL: [MetricKind; 16] = [
        MetricKind::Runtime,
        MetricKind::RqTime,
        MetricKind::BlockTime,
        MetricKind::IowaitTime,
        MetricKind::SleepTime,
        MetricKind::PipeWaitTime,
        MetricKind::PipeWaitCount,
        MetricKind::SocketWaitTime,
        MetricKind::SocketWaitCount,
        MetricKind::SectorCount,
        MetricKind::EpollWaitTime,
        MetricKind::EpollWaitCount,
        MetricKind::EpollFileWait,
        MetricKind::FutexWaitTime,
        MetricKind::FutexWaitCount,
        MetricKind::FutexWakeCount,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Runtime => "runtime",
            MetricKind::RqTime => "rq_time",
            MetricKind::BlockTime => "block_time",
            MetricKind::IowaitTime => "iowait_time",
            MetricKind::SleepTime => "sleep_time",
            MetricKind::PipeWaitTime => "pipe_wait_time",
            MetricKind::PipeWaitCount => "pipe_wait_count",
            MetricKind::SocketWaitTime => "socket_wait_time",
            MetricKind::SocketWaitCount => "socket_wait_count",
            MetricKind::SectorCount => "sector_count",
            MetricKind::EpollWaitTime => "epoll_wait_time",
            MetricKind::EpollWaitCount => "epoll_wait_count",
            MetricKind::EpollFileWait => "epoll_file_wait",
            MetricKind::FutexWaitTime => "futex_wait_time",
            MetricKind::FutexWaitCount => "futex_wait_count",
            MetricKind::FutexWakeCount => "futex_wake_count",
        }
    }

    /// Nanosecond-valued metrics. Everything else is a count.
    pub fn is_time(self) -> bool {
        matches!(
            self,
            MetricKind::Runtime
                | MetricKind::RqTime
                | MetricKind::BlockTime
                | MetricKind::IowaitTime
                | MetricKind::SleepTime
                | MetricKind::PipeWaitTime
                | MetricKind::SocketWaitTime
                | MetricKind::EpollWaitTime
                | MetricKind::EpollFileWait
                | MetricKind::FutexWaitTime
        )
    }

    pub fn is_scheduler(self) -> bool {
        self.resource_shape() == ResourceShape::None
    }

    /// Metrics describing inter-thread communication, the ones whose
    /// resource can link two threads.
    pub fn is_ipc(self) -> bool {
        matches!(
            self.resource_shape(),
            ResourceShape::Bri | ResourceShape::Futex | ResourceShape::EpollFile
        )
    }

    /// Only `sector_count` is collected for every thread on the system.
    pub fn is_global_scope(self) -> bool {
        self == MetricKind::SectorCount
    }

    pub fn resource_shape(self) -> ResourceShape {
        match self {
            MetricKind::Runtime
            | MetricKind::RqTime
            | MetricKind::BlockTime
            | MetricKind::IowaitTime
            | MetricKind::SleepTime => ResourceShape::None,
            MetricKind::PipeWaitTime
            | MetricKind::PipeWaitCount
            | MetricKind::SocketWaitTime
            | MetricKind::SocketWaitCount
            | MetricKind::EpollWaitTime
            | MetricKind::EpollWaitCount => ResourceShape::Bri,
            MetricKind::SectorCount => ResourceShape::Device,
            MetricKind::EpollFileWait => ResourceShape::EpollFile,
            MetricKind::FutexWaitTime | MetricKind::FutexWaitCount | MetricKind::FutexWakeCount => {
                ResourceShape::Futex
            }
        }
    }

    /// The count metric paired with a wait-time metric.
    pub fn paired_count(self) -> Option<MetricKind> {
        match self {
            MetricKind::PipeWaitTime => Some(MetricKind::PipeWaitCount),
            MetricKind::SocketWaitTime => Some(MetricKind::SocketWaitCount),
            MetricKind::EpollWaitTime => Some(MetricKind::EpollWaitCount),
            MetricKind::FutexWaitTime => Some(MetricKind::FutexWaitCount),
            _ => None,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown metric {0:?}")]
pub struct UnknownMetric(pub String);

impl FromStr for MetricKind {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("{kind} cannot carry resource {resource:?}")]
    ResourceMismatch {
        kind: MetricKind,
        resource: Option<Resource>,
    },
}

/// One per-second observation for one thread.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricSample {
    pub interval_s: u64,
    pub subject: ThreadRef,
    pub resource: Option<Resource>,
    pub kind: MetricKind,
    pub value: u64,
}

impl MetricSample {
    /// Builds a sample, checking that the resource fits the metric.
    pub fn new(
        interval_s: u64,
        subject: ThreadRef,
        kind: MetricKind,
        resource: Option<Resource>,
        value: u64,
    ) -> Result<Self, SampleError> {
        let fits = matches!(
            (kind.resource_shape(), &resource),
            (ResourceShape::None, None)
                | (ResourceShape::Bri, Some(Resource::Bri(_)))
                | (ResourceShape::Futex, Some(Resource::Futex(_)))
                | (ResourceShape::Device, Some(Resource::Device(_)))
                | (ResourceShape::EpollFile, Some(Resource::EpollFile { .. }))
        );
        if !fits {
            return Err(SampleError::ResourceMismatch { kind, resource });
        }
        Ok(Self {
            interval_s,
            subject,
            resource,
            kind,
            value,
        })
    }

    /// Total order used for every emitted sample stream.
    pub fn sort_key(&self) -> (u64, (u32, u32), MetricKind, Option<Resource>) {
        (
            self.interval_s,
            self.subject.key(),
            self.kind,
            self.resource,
        )
    }

    pub fn resource_string(&self) -> String {
        self.resource.map(|r| r.to_string()).unwrap_or_default()
    }
}

pub fn sort_samples(samples: &mut [MetricSample]) {
    samples.sort_by_key(|s| s.sort_key());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{Bri, BriKind, DeviceRef, FutexRef};

    #[test]
    fn sixteen_metrics_round_trip_names() {
        assert_eq!(MetricKind::ALL.len(), 16);
        for m in MetricKind::ALL {
            assert_eq!(m.as_str().parse::<MetricKind>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
    }

    #[test]
    fn time_vs_count_split() {
        let times: Vec<_> = MetricKind::ALL.iter().filter(|m| m.is_time()).collect();
        assert_eq!(times.len(), 10);
        assert!(!MetricKind::SectorCount.is_time());
        assert!(MetricKind::EpollFileWait.is_time());
    }

    #[test]
    fn resource_typing_enforced() {
        let t = ThreadRef::new(1, 1, "a").unwrap();
        let pipe = Resource::Bri(Bri::from_inode(BriKind::Pipe, 1, 2).unwrap());
        let fut = Resource::Futex(FutexRef { tgid: 1, uaddr: 8 });
        let dev = Resource::Device(DeviceRef::new(8, 0));
        assert!(MetricSample::new(0, t.clone(), MetricKind::Runtime, None, 1).is_ok());
        assert!(MetricSample::new(0, t.clone(), MetricKind::Runtime, Some(pipe), 1).is_err());
        assert!(MetricSample::new(0, t.clone(), MetricKind::FutexWaitTime, Some(fut), 1).is_ok());
        assert!(MetricSample::new(0, t.clone(), MetricKind::FutexWaitTime, Some(pipe), 1).is_err());
        assert!(MetricSample::new(0, t.clone(), MetricKind::SectorCount, Some(dev), 8).is_ok());
        assert!(MetricSample::new(0, t, MetricKind::EpollFileWait, Some(pipe), 8).is_err());
    }
}
