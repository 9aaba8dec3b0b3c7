//! Fixed-width records exchanged with the in-kernel probes.
//!
//! The layouts here and in `include/kprism_wire.h` must agree byte for byte.
//! All integers are native-endian. Offsets are listed next to each field.

use std::net::{Ipv4Addr, Ipv6Addr};

use kprism_core::{
    Bri, BriKind, DeviceRef, FutexRef, IdError, MetricKind, Resource, SocketEndpoint, SocketFamily,
};
use thiserror::Error;

pub const KEY_SIZE: usize = 40;
pub const VALUE_SIZE: usize = 16;
pub const DISCOVERY_SIZE: usize = 192;
pub const DISCOVERY_HEADER_SIZE: usize = 24;
pub const UNIX_PATH_LEN: usize = 108;
pub const COMM_LEN: usize = 16;

pub const AF_UNIX: u16 = 1;
pub const AF_INET: u16 = 2;
pub const AF_INET6: u16 = 10;

/// Accumulator classes; each carries a time and a count slot.
pub mod class {
    pub const RUNTIME: u8 = 0;
    pub const RQ: u8 = 1;
    pub const BLOCK: u8 = 2;
    pub const IOWAIT: u8 = 3;
    pub const SLEEP: u8 = 4;
    pub const PIPE_WAIT: u8 = 5;
    pub const SOCKET_WAIT: u8 = 6;
    pub const SECTOR: u8 = 7;
    pub const EPOLL_WAIT: u8 = 8;
    pub const EPOLL_FILE_WAIT: u8 = 9;
    pub const FUTEX_WAIT: u8 = 10;
    pub const FUTEX_WAKE: u8 = 11;
}

/// Resource encodings of `res_kind` (and `aux_kind` for the file half of an
/// epoll/file pair).
pub mod res_kind {
    pub const NONE: u8 = 0;
    pub const PIPE: u8 = 1;
    pub const SOCK_INET: u8 = 2;
    pub const SOCK_INET6: u8 = 3;
    pub const SOCK_UNIX: u8 = 4;
    pub const EPOLL: u8 = 5;
    pub const FILE: u8 = 6;
    pub const FUTEX: u8 = 7;
    pub const DEVICE: u8 = 8;
    pub const EPOLL_FILE: u8 = 9;
}

pub mod discovery_type {
    pub const SOCKET: u32 = 1;
    pub const PIPE: u32 = 2;
    pub const COMM: u32 = 3;
    pub const EPOLL_CTL: u32 = 4;
}

pub const EPOLL_CTL_ADD: u32 = 1;
pub const EPOLL_CTL_DEL: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("record is {got} bytes, expected {want}")]
    Size { got: usize, want: usize },
    #[error("unknown accumulator class {0}")]
    Class(u8),
    #[error("unknown resource kind {0}")]
    ResKind(u8),
    #[error("resource kind {res_kind} not valid for class {class}")]
    Mismatch { class: u8, res_kind: u8 },
    #[error("unknown discovery record type {0}")]
    DiscoveryType(u32),
    #[error("bad identifier: {0}")]
    Id(#[from] IdError),
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_ne_bytes(b[off..off + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], off: usize) -> u64 {
    u64::from_ne_bytes(b[off..off + 8].try_into().unwrap())
}

fn u16_at(b: &[u8], off: usize) -> u16 {
    u16::from_ne_bytes(b[off..off + 2].try_into().unwrap())
}

fn check(b: &[u8], want: usize) -> Result<(), WireError> {
    if b.len() != want {
        return Err(WireError::Size { got: b.len(), want });
    }
    Ok(())
}

/// Accumulator map key.
///
/// ```text
///  0 u32 tgid      4 u32 tid
///  8 u8  class     9 u8  res_kind   10 u8 aux_kind   11..16 padding
/// 16 u64 res0     24 u64 res1       32 u64 res2
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct WireKey {
    pub tgid: u32,
    pub tid: u32,
    pub class: u8,
    pub res_kind: u8,
    pub aux_kind: u8,
    pub res: [u64; 3],
}

/// Accumulator map value, summed over per-CPU shards by the reader.
///
/// ```text
///  0 u64 time_ns   8 u64 count
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WireValue {
    pub time_ns: u64,
    pub count: u64,
}

impl WireValue {
    pub fn encode(&self) -> [u8; VALUE_SIZE] {
        let mut b = [0u8; VALUE_SIZE];
        b[0..8].copy_from_slice(&self.time_ns.to_ne_bytes());
        b[8..16].copy_from_slice(&self.count.to_ne_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        check(b, VALUE_SIZE)?;
        Ok(Self {
            time_ns: u64_at(b, 0),
            count: u64_at(b, 8),
        })
    }

    pub fn saturating_add(self, other: WireValue) -> WireValue {
        WireValue {
            time_ns: self.time_ns.saturating_add(other.time_ns),
            count: self.count.saturating_add(other.count),
        }
    }
}

/// The (time metric, count metric) carried by an accumulator class.
pub fn class_metrics(class: u8) -> Result<(Option<MetricKind>, Option<MetricKind>), WireError> {
    use MetricKind::*;
    Ok(match class {
        class::RUNTIME => (Some(Runtime), None),
        class::RQ => (Some(RqTime), None),
        class::BLOCK => (Some(BlockTime), None),
        class::IOWAIT => (Some(IowaitTime), None),
        class::SLEEP => (Some(SleepTime), None),
        class::PIPE_WAIT => (Some(PipeWaitTime), Some(PipeWaitCount)),
        class::SOCKET_WAIT => (Some(SocketWaitTime), Some(SocketWaitCount)),
        class::SECTOR => (None, Some(SectorCount)),
        class::EPOLL_WAIT => (Some(EpollWaitTime), Some(EpollWaitCount)),
        class::EPOLL_FILE_WAIT => (Some(EpollFileWait), None),
        class::FUTEX_WAIT => (Some(FutexWaitTime), Some(FutexWaitCount)),
        class::FUTEX_WAKE => (None, Some(FutexWakeCount)),
        c => return Err(WireError::Class(c)),
    })
}

/// Class holding `metric`, and whether it lives in the count slot.
pub fn metric_class(metric: MetricKind) -> (u8, bool) {
    use MetricKind::*;
    match metric {
        Runtime => (class::RUNTIME, false),
        RqTime => (class::RQ, false),
        BlockTime => (class::BLOCK, false),
        IowaitTime => (class::IOWAIT, false),
        SleepTime => (class::SLEEP, false),
        PipeWaitTime => (class::PIPE_WAIT, false),
        PipeWaitCount => (class::PIPE_WAIT, true),
        SocketWaitTime => (class::SOCKET_WAIT, false),
        SocketWaitCount => (class::SOCKET_WAIT, true),
        SectorCount => (class::SECTOR, true),
        EpollWaitTime => (class::EPOLL_WAIT, false),
        EpollWaitCount => (class::EPOLL_WAIT, true),
        EpollFileWait => (class::EPOLL_FILE_WAIT, false),
        FutexWaitTime => (class::FUTEX_WAIT, false),
        FutexWaitCount => (class::FUTEX_WAIT, true),
        FutexWakeCount => (class::FUTEX_WAKE, true),
    }
}

fn bri_kind_code(kind: BriKind) -> u8 {
    match kind {
        BriKind::Pipe => res_kind::PIPE,
        BriKind::SocketInet => res_kind::SOCK_INET,
        BriKind::SocketInet6 => res_kind::SOCK_INET6,
        BriKind::SocketUnix => res_kind::SOCK_UNIX,
        BriKind::Epoll => res_kind::EPOLL,
        BriKind::RegularFile => res_kind::FILE,
    }
}

fn bri_from(code: u8, a: u64, b: u64) -> Result<Bri, WireError> {
    let kind = match code {
        res_kind::PIPE => BriKind::Pipe,
        res_kind::SOCK_INET => BriKind::SocketInet,
        res_kind::SOCK_INET6 => BriKind::SocketInet6,
        res_kind::SOCK_UNIX => BriKind::SocketUnix,
        res_kind::FILE => BriKind::RegularFile,
        res_kind::EPOLL => return Ok(Bri::from_epoll_object(a)?),
        c => return Err(WireError::ResKind(c)),
    };
    Ok(Bri::from_inode(kind, a, b)?)
}

fn bri_words(bri: &Bri) -> (u64, u64) {
    if bri.kind() == BriKind::Epoll {
        (bri.object_addr(), 0)
    } else {
        (bri.dev(), bri.ino())
    }
}

impl WireKey {
    pub fn new(tgid: u32, tid: u32, metric: MetricKind, resource: Option<&Resource>) -> Self {
        let mut key = WireKey {
            tgid,
            tid,
            class: metric_class(metric).0,
            ..Default::default()
        };
        match resource {
            None => {}
            Some(Resource::Bri(b)) => {
                let (a, c) = bri_words(b);
                key.res_kind = bri_kind_code(b.kind());
                key.res = [a, c, 0];
            }
            Some(Resource::Futex(f)) => {
                key.res_kind = res_kind::FUTEX;
                key.res = [u64::from(f.tgid), f.uaddr, 0];
            }
            Some(Resource::Device(d)) => {
                key.res_kind = res_kind::DEVICE;
                key.res = [u64::from(d.major), u64::from(d.minor), 0];
            }
            Some(Resource::EpollFile { epoll, file }) => {
                let (dev, ino) = bri_words(file);
                key.res_kind = res_kind::EPOLL_FILE;
                key.aux_kind = bri_kind_code(file.kind());
                key.res = [epoll.object_addr(), dev, ino];
            }
        }
        key
    }

    pub fn encode(&self) -> [u8; KEY_SIZE] {
        let mut b = [0u8; KEY_SIZE];
        b[0..4].copy_from_slice(&self.tgid.to_ne_bytes());
        b[4..8].copy_from_slice(&self.tid.to_ne_bytes());
        b[8] = self.class;
        b[9] = self.res_kind;
        b[10] = self.aux_kind;
        for (i, w) in self.res.iter().enumerate() {
            b[16 + 8 * i..24 + 8 * i].copy_from_slice(&w.to_ne_bytes());
        }
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        check(b, KEY_SIZE)?;
        Ok(Self {
            tgid: u32_at(b, 0),
            tid: u32_at(b, 4),
            class: b[8],
            res_kind: b[9],
            aux_kind: b[10],
            res: [u64_at(b, 16), u64_at(b, 24), u64_at(b, 32)],
        })
    }

    /// The resource the key refers to, checked against its class.
    pub fn resource(&self) -> Result<Option<Resource>, WireError> {
        let [a, b, c] = self.res;
        let res = match self.res_kind {
            res_kind::NONE => None,
            res_kind::FUTEX => Some(Resource::Futex(FutexRef {
                tgid: a as u32,
                uaddr: b,
            })),
            res_kind::DEVICE => Some(Resource::Device(DeviceRef::new(a as u32, b as u32))),
            res_kind::EPOLL_FILE => Some(Resource::EpollFile {
                epoll: Bri::from_epoll_object(a)?,
                file: bri_from(self.aux_kind, b, c)?,
            }),
            k => Some(Resource::Bri(bri_from(k, a, b)?)),
        };
        let (time, count) = class_metrics(self.class)?;
        let metric = time.or(count).expect("every class has a metric");
        let fits = kprism_core::MetricSample::new(
            0,
            kprism_core::ThreadRef {
                tgid: self.tgid,
                tid: self.tid,
                comm: String::new(),
            },
            metric,
            res,
            0,
        )
        .is_ok();
        if !fits {
            return Err(WireError::Mismatch {
                class: self.class,
                res_kind: self.res_kind,
            });
        }
        Ok(res)
    }

    pub fn is_global_scope(&self) -> bool {
        self.class == class::SECTOR
    }
}

/// Discovery records drained from the ring buffer. Every record is
/// `DISCOVERY_SIZE` bytes: a header, then a type-specific payload.
///
/// ```text
/// header   0 u32 type   4 u32 tgid   8 u32 tid   12 u32 pad   16 u64 ts_ns
/// SOCKET  24 u64 dev   32 u64 ino   40 u16 family   42 u16 protocol
///         44 u16 sport 46 u16 dport 48 u8[16] src   64 u8[16] dst
///         80 u8[108] unix path
///         inet: addresses in network byte order, ports in host order.
///         unix: src/dst hold the own and peer socket inode (u64) instead.
/// PIPE    24 u64 dev   32 u64 ino
/// COMM    24 u8[16] comm, NUL padded
/// EPOLL_CTL 24 u64 epoll object   32 u32 op (1 add, 2 del)   36 u32 target res_kind
///         40 u64 target dev        48 u64 target ino
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiscoveryRecord {
    Socket {
        tgid: u32,
        tid: u32,
        ts_ns: u64,
        bri: Bri,
        endpoint: SocketEndpoint,
    },
    Pipe {
        tgid: u32,
        tid: u32,
        ts_ns: u64,
        bri: Bri,
    },
    Comm {
        tgid: u32,
        tid: u32,
        ts_ns: u64,
        comm: String,
    },
    EpollCtl {
        tgid: u32,
        tid: u32,
        ts_ns: u64,
        add: bool,
        epoll: Bri,
        target: Bri,
    },
}

fn put_u16(b: &mut [u8], off: usize, v: u16) {
    b[off..off + 2].copy_from_slice(&v.to_ne_bytes());
}

fn put_u32(b: &mut [u8], off: usize, v: u32) {
    b[off..off + 4].copy_from_slice(&v.to_ne_bytes());
}

fn put_u64(b: &mut [u8], off: usize, v: u64) {
    b[off..off + 8].copy_from_slice(&v.to_ne_bytes());
}

fn cstr(b: &[u8]) -> String {
    let end = b.iter().position(|c| *c == 0).unwrap_or(b.len());
    String::from_utf8_lossy(&b[..end]).into_owned()
}

fn unix_inode(name: &str) -> u64 {
    name.strip_prefix("sock:")
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

impl DiscoveryRecord {
    pub fn tgid(&self) -> u32 {
        match self {
            DiscoveryRecord::Socket { tgid, .. }
            | DiscoveryRecord::Pipe { tgid, .. }
            | DiscoveryRecord::Comm { tgid, .. }
            | DiscoveryRecord::EpollCtl { tgid, .. } => *tgid,
        }
    }

    pub fn ts_ns(&self) -> u64 {
        match self {
            DiscoveryRecord::Socket { ts_ns, .. }
            | DiscoveryRecord::Pipe { ts_ns, .. }
            | DiscoveryRecord::Comm { ts_ns, .. }
            | DiscoveryRecord::EpollCtl { ts_ns, .. } => *ts_ns,
        }
    }

    pub fn encode(&self) -> [u8; DISCOVERY_SIZE] {
        let mut b = [0u8; DISCOVERY_SIZE];
        let (ty, tgid, tid, ts) = match self {
            DiscoveryRecord::Socket {
                tgid,
                tid,
                ts_ns,
                bri,
                endpoint,
            } => {
                put_u64(&mut b, 24, bri.dev());
                put_u64(&mut b, 32, bri.ino());
                let family = match endpoint.family {
                    SocketFamily::Inet => AF_INET,
                    SocketFamily::Inet6 => AF_INET6,
                    SocketFamily::Unix => AF_UNIX,
                    SocketFamily::Unsupported(f) => f,
                };
                put_u16(&mut b, 40, family);
                put_u16(&mut b, 42, endpoint.protocol as u16);
                put_u16(&mut b, 44, endpoint.src_port);
                put_u16(&mut b, 46, endpoint.dst_port);
                match endpoint.family {
                    SocketFamily::Inet => {
                        let ip = |s: &str| s.parse::<Ipv4Addr>().unwrap_or(Ipv4Addr::UNSPECIFIED);
                        b[48..52].copy_from_slice(&ip(&endpoint.src_addr).octets());
                        b[64..68].copy_from_slice(&ip(&endpoint.dst_addr).octets());
                    }
                    SocketFamily::Inet6 => {
                        let ip = |s: &str| s.parse::<Ipv6Addr>().unwrap_or(Ipv6Addr::UNSPECIFIED);
                        b[48..64].copy_from_slice(&ip(&endpoint.src_addr).octets());
                        b[64..80].copy_from_slice(&ip(&endpoint.dst_addr).octets());
                    }
                    SocketFamily::Unix => {
                        put_u64(&mut b, 48, unix_inode(&endpoint.src_addr));
                        put_u64(&mut b, 64, unix_inode(&endpoint.dst_addr));
                        let path = endpoint.path.as_bytes();
                        let n = path.len().min(UNIX_PATH_LEN - 1);
                        b[80..80 + n].copy_from_slice(&path[..n]);
                    }
                    SocketFamily::Unsupported(_) => {}
                }
                (discovery_type::SOCKET, tgid, tid, ts_ns)
            }
            DiscoveryRecord::Pipe {
                tgid,
                tid,
                ts_ns,
                bri,
            } => {
                put_u64(&mut b, 24, bri.dev());
                put_u64(&mut b, 32, bri.ino());
                (discovery_type::PIPE, tgid, tid, ts_ns)
            }
            DiscoveryRecord::Comm {
                tgid,
                tid,
                ts_ns,
                comm,
            } => {
                let c = comm.as_bytes();
                let n = c.len().min(COMM_LEN - 1);
                b[24..24 + n].copy_from_slice(&c[..n]);
                (discovery_type::COMM, tgid, tid, ts_ns)
            }
            DiscoveryRecord::EpollCtl {
                tgid,
                tid,
                ts_ns,
                add,
                epoll,
                target,
            } => {
                put_u64(&mut b, 24, epoll.object_addr());
                put_u32(&mut b, 32, if *add { EPOLL_CTL_ADD } else { EPOLL_CTL_DEL });
                put_u32(&mut b, 36, u32::from(bri_kind_code(target.kind())));
                let (dev, ino) = bri_words(target);
                put_u64(&mut b, 40, dev);
                put_u64(&mut b, 48, ino);
                (discovery_type::EPOLL_CTL, tgid, tid, ts_ns)
            }
        };
        put_u32(&mut b, 0, ty);
        put_u32(&mut b, 4, *tgid);
        put_u32(&mut b, 8, *tid);
        put_u64(&mut b, 16, *ts);
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        check(b, DISCOVERY_SIZE)?;
        let (tgid, tid, ts_ns) = (u32_at(b, 4), u32_at(b, 8), u64_at(b, 16));
        Ok(match u32_at(b, 0) {
            discovery_type::SOCKET => {
                let (dev, ino) = (u64_at(b, 24), u64_at(b, 32));
                let family_raw = u16_at(b, 40);
                let protocol = u32::from(u16_at(b, 42));
                let (sport, dport) = (u16_at(b, 44), u16_at(b, 46));
                let (kind, endpoint) = match family_raw {
                    AF_INET => {
                        let ip =
                            |o: usize| Ipv4Addr::from(<[u8; 4]>::try_from(&b[o..o + 4]).unwrap());
                        (
                            BriKind::SocketInet,
                            SocketEndpoint::inet(
                                protocol,
                                (&ip(48).to_string(), sport),
                                (&ip(64).to_string(), dport),
                            ),
                        )
                    }
                    AF_INET6 => {
                        let ip =
                            |o: usize| Ipv6Addr::from(<[u8; 16]>::try_from(&b[o..o + 16]).unwrap());
                        (
                            BriKind::SocketInet6,
                            SocketEndpoint::inet6(
                                protocol,
                                (&ip(48).to_string(), sport),
                                (&ip(64).to_string(), dport),
                            ),
                        )
                    }
                    AF_UNIX => (
                        BriKind::SocketUnix,
                        SocketEndpoint::unix(
                            &cstr(&b[80..80 + UNIX_PATH_LEN]),
                            &format!("sock:{}", u64_at(b, 48)),
                            &format!("sock:{}", u64_at(b, 64)),
                        ),
                    ),
                    other => (
                        BriKind::SocketInet,
                        SocketEndpoint {
                            family: SocketFamily::Unsupported(other),
                            protocol,
                            src_addr: String::new(),
                            src_port: sport,
                            dst_addr: String::new(),
                            dst_port: dport,
                            path: String::new(),
                        },
                    ),
                };
                DiscoveryRecord::Socket {
                    tgid,
                    tid,
                    ts_ns,
                    bri: Bri::from_inode(kind, dev, ino)?,
                    endpoint,
                }
            }
            discovery_type::PIPE => DiscoveryRecord::Pipe {
                tgid,
                tid,
                ts_ns,
                bri: Bri::from_inode(BriKind::Pipe, u64_at(b, 24), u64_at(b, 32))?,
            },
            discovery_type::COMM => DiscoveryRecord::Comm {
                tgid,
                tid,
                ts_ns,
                comm: cstr(&b[24..24 + COMM_LEN]),
            },
            discovery_type::EPOLL_CTL => DiscoveryRecord::EpollCtl {
                tgid,
                tid,
                ts_ns,
                add: u32_at(b, 32) == EPOLL_CTL_ADD,
                epoll: Bri::from_epoll_object(u64_at(b, 24))?,
                target: bri_from(u32_at(b, 36) as u8, u64_at(b, 40), u64_at(b, 48))?,
            },
            t => return Err(WireError::DiscoveryType(t)),
        })
    }
}
