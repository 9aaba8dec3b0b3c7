//! Newline-delimited metric store shared by live recording and trace replay.
//!
//! Two line shapes exist. Sample lines carry one [`MetricSample`]:
//!
//! ```text
//! {"ts":1700000000,"iv":3,"tgid":10,"tid":11,"comm":"db","metric":"futex_wait_time","res":"10:0x7f00","val":420000,"lossy":false}
//! ```
//!
//! Endpoint lines describe a socket the first time it shows up, and precede
//! the samples that reference it:
//!
//! ```text
//! {"ep":"8_4411","kind":"sock_inet","family":"inet","proto":6,"src":"10.0.0.1","sport":40000,"dst":"10.0.0.2","dport":5432,"path":""}
//! ```

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Bri, SocketEndpoint, SocketFamily};
use crate::metric::{MetricKind, MetricSample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub ts: u64,
    pub iv: u64,
    pub tgid: u32,
    pub tid: u32,
    pub comm: String,
    pub metric: MetricKind,
    pub res: String,
    pub val: u64,
    pub lossy: bool,
}

impl StoreRecord {
    pub fn from_sample(sample: &MetricSample, wall_ts: u64, lossy: bool) -> Self {
        Self {
            ts: wall_ts,
            iv: sample.interval_s,
            tgid: sample.subject.tgid,
            tid: sample.subject.tid,
            comm: sample.subject.comm.clone(),
            metric: sample.kind,
            res: sample.resource_string(),
            val: sample.value,
            lossy,
        }
    }

    pub fn thread(&self) -> (u32, u32) {
        (self.tgid, self.tid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointRecord {
    /// Canonical resource string, as used in the `res` field of samples.
    pub ep: String,
    pub kind: String,
    pub family: SocketFamily,
    pub proto: u32,
    pub src: String,
    pub sport: u16,
    pub dst: String,
    pub dport: u16,
    pub path: String,
}

impl EndpointRecord {
    pub fn new(bri: &Bri, endpoint: &SocketEndpoint) -> Self {
        Self {
            ep: bri.canonical(),
            kind: bri.kind().as_str().to_string(),
            family: endpoint.family,
            proto: endpoint.protocol,
            src: endpoint.src_addr.clone(),
            sport: endpoint.src_port,
            dst: endpoint.dst_addr.clone(),
            dport: endpoint.dst_port,
            path: endpoint.path.clone(),
        }
    }

    pub fn endpoint(&self) -> SocketEndpoint {
        SocketEndpoint {
            family: self.family,
            protocol: self.proto,
            src_addr: self.src.clone(),
            src_port: self.sport,
            dst_addr: self.dst.clone(),
            dst_port: self.dport,
            path: self.path.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub struct StoreWriter<W: Write> {
    out: W,
}

impl<W: Write> StoreWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write_endpoint(&mut self, bri: &Bri, endpoint: &SocketEndpoint) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &EndpointRecord::new(bri, endpoint))?;
        self.out.write_all(b"\n")
    }

    pub fn write_record(&mut self, record: &StoreRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    /// Writes one flushed interval: new endpoints first, then the samples.
    pub fn write_interval(
        &mut self,
        endpoints: &[(Bri, SocketEndpoint)],
        samples: &[MetricSample],
        wall_ts: u64,
        lossy: bool,
    ) -> io::Result<()> {
        for (bri, ep) in endpoints {
            self.write_endpoint(bri, ep)?;
        }
        for s in samples {
            self.write_record(&StoreRecord::from_sample(s, wall_ts, lossy))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A loaded store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Store {
    pub records: Vec<StoreRecord>,
    /// Endpoint metadata keyed by canonical resource string.
    pub endpoints: BTreeMap<String, EndpointRecord>,
}

impl Store {
    pub fn read<R: BufRead>(input: R) -> Result<Self, StoreError> {
        let mut store = Store::default();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let parse = |source| StoreError::Parse {
                line: i + 1,
                source,
            };
            if trimmed.starts_with("{\"ep\"") {
                let ep: EndpointRecord = serde_json::from_str(trimmed).map_err(parse)?;
                store.endpoints.entry(ep.ep.clone()).or_insert(ep);
            } else {
                store
                    .records
                    .push(serde_json::from_str(trimmed).map_err(parse)?);
            }
        }
        Ok(store)
    }

    pub fn open(path: &std::path::Path) -> Result<Self, StoreError> {
        let f = std::fs::File::open(path)?;
        Self::read(io::BufReader::new(f))
    }
}
