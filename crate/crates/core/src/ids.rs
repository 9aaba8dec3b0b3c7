//! Identities of the things metrics are attributed to: threads, backing
//! resources, futexes and block devices.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("epoll resources are keyed by object address, not inode")]
    EpollFromInode,
    #[error("epoll object address must be nonzero")]
    ZeroEpollAddress,
    #[error("thread ids must be >= 1 (tgid={tgid}, tid={tid})")]
    InvalidThread { tgid: u32, tid: u32 },
    #[error("malformed {what}: {input:?}")]
    Parse { what: &'static str, input: String },
}

fn parse_err(what: &'static str, input: &str) -> IdError {
    IdError::Parse {
        what,
        input: input.to_string(),
    }
}

/// A kernel thread. Equality, ordering and hashing use `(tgid, tid)` only;
/// `comm` is informational.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThreadRef {
    pub tgid: u32,
    pub tid: u32,
    #[serde(default)]
    pub comm: String,
}

impl ThreadRef {
    pub fn new(tgid: u32, tid: u32, comm: impl Into<String>) -> Result<Self, IdError> {
        if tgid == 0 || tid == 0 {
            return Err(IdError::InvalidThread { tgid, tid });
        }
        Ok(Self {
            tgid,
            tid,
            comm: comm.into(),
        })
    }

    pub fn key(&self) -> (u32, u32) {
        (self.tgid, self.tid)
    }
}

impl PartialEq for ThreadRef {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for ThreadRef {}

impl Hash for ThreadRef {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl PartialOrd for ThreadRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ThreadRef {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for ThreadRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.comm.is_empty() {
            write!(f, "{}/{}", self.tgid, self.tid)
        } else {
            write!(f, "{}/{} ({})", self.tgid, self.tid, self.comm)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BriKind {
    Pipe,
    SocketInet,
    SocketInet6,
    SocketUnix,
    Epoll,
    RegularFile,
}

impl BriKind {
    pub const ALL: [BriKind; 6] = [
        BriKind::Pipe,
        BriKind::SocketInet,
        BriKind::SocketInet6,
        BriKind::SocketUnix,
        BriKind::Epoll,
        BriKind::RegularFile,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BriKind::Pipe => "pipe",
            BriKind::SocketInet => "sock_inet",
            BriKind::SocketInet6 => "sock_inet6",
            BriKind::SocketUnix => "sock_unix",
            BriKind::Epoll => "epoll",
            BriKind::RegularFile => "file",
        }
    }

    pub fn is_socket(self) -> bool {
        matches!(
            self,
            BriKind::SocketInet | BriKind::SocketInet6 | BriKind::SocketUnix
        )
    }
}

impl FromStr for BriKind {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BriKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| parse_err("resource kind", s))
    }
}

/// Backing Resource Identifier: the kernel object behind a file descriptor.
///
/// Pipes, sockets and regular files are identified by the superblock device
/// and inode number, so every descriptor onto the same object yields the same
/// identifier. Epoll instances all live on the anonymous inode filesystem and
/// share an inode, so they are keyed by the address of their `eventpoll`
/// object instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bri {
    kind: BriKind,
    dev: u64,
    ino: u64,
    object_addr: u64,
}

impl Bri {
    pub fn from_inode(kind: BriKind, dev: u64, ino: u64) -> Result<Self, IdError> {
        if kind == BriKind::Epoll {
            return Err(IdError::EpollFromInode);
        }
        Ok(Self {
            kind,
            dev,
            ino,
            object_addr: 0,
        })
    }

    pub fn from_epoll_object(object_addr: u64) -> Result<Self, IdError> {
        if object_addr == 0 {
            return Err(IdError::ZeroEpollAddress);
        }
        Ok(Self {
            kind: BriKind::Epoll,
            dev: 0,
            ino: 0,
            object_addr,
        })
    }

    pub fn kind(&self) -> BriKind {
        self.kind
    }

    pub fn dev(&self) -> u64 {
        self.dev
    }

    pub fn ino(&self) -> u64 {
        self.ino
    }

    pub fn object_addr(&self) -> u64 {
        self.object_addr
    }

    /// `dev_ino` for inode-backed resources, lowercase hex address for epoll.
    pub fn canonical(&self) -> String {
        self.to_string()
    }

    /// Canonical form prefixed by the kind, e.g. `pipe:14_2159682`. Used by
    /// trace files, where the kind cannot be recovered from context.
    pub fn tagged(&self) -> String {
        format!("{}:{}", self.kind.as_str(), self)
    }

    pub fn parse_tagged(s: &str) -> Result<Self, IdError> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| parse_err("resource", s))?;
        Self::parse_canonical(kind.parse()?, rest)
    }

    pub fn parse_canonical(kind: BriKind, s: &str) -> Result<Self, IdError> {
        if kind == BriKind::Epoll {
            let addr = u64::from_str_radix(s, 16).map_err(|_| parse_err("epoll address", s))?;
            return Self::from_epoll_object(addr);
        }
        let (dev, ino) = s.split_once('_').ok_or_else(|| parse_err("dev_ino", s))?;
        let dev = dev.parse().map_err(|_| parse_err("device id", s))?;
        let ino = ino.parse().map_err(|_| parse_err("inode", s))?;
        Self::from_inode(kind, dev, ino)
    }
}

impl fmt::Display for Bri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BriKind::Epoll => write!(f, "{:x}", self.object_addr),
            _ => write!(f, "{}_{}", self.dev, self.ino),
        }
    }
}

impl Serialize for Bri {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.tagged())
    }
}

impl<'de> Deserialize<'de> for Bri {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Bri::parse_tagged(&s).map_err(serde::de::Error::custom)
    }
}

/// A futex word. Keyed by process because the same virtual address means
/// different memory in different address spaces; a futex shared between two
/// processes through a mapping therefore shows up under two keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FutexRef {
    pub tgid: u32,
    pub uaddr: u64,
}

impl fmt::Display for FutexRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:#x}", self.tgid, self.uaddr)
    }
}

impl FromStr for FutexRef {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (tgid, addr) = s.split_once(':').ok_or_else(|| parse_err("futex", s))?;
        let addr = addr
            .strip_prefix("0x")
            .ok_or_else(|| parse_err("futex address", s))?;
        Ok(Self {
            tgid: tgid.parse().map_err(|_| parse_err("futex tgid", s))?,
            uaddr: u64::from_str_radix(addr, 16).map_err(|_| parse_err("futex address", s))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceRef {
    pub major: u32,
    pub minor: u32,
}

impl DeviceRef {
    pub fn new(major: u32, minor: u32) -> Self {
        Self { major, minor }
    }
}

impl fmt::Display for DeviceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.major, self.minor)
    }
}

impl FromStr for DeviceRef {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (major, minor) = s.split_once(':').ok_or_else(|| parse_err("device", s))?;
        Ok(Self {
            major: major.parse().map_err(|_| parse_err("device major", s))?,
            minor: minor.parse().map_err(|_| parse_err("device minor", s))?,
        })
    }
}

impl Serialize for DeviceRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DeviceRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocketFamily {
    Inet,
    Inet6,
    Unix,
    /// Any other address family, carried as the raw `AF_*` value so the
    /// engine can count and skip it.
    #[serde(untagged)]
    Unsupported(u16),
}

impl SocketFamily {
    pub fn is_supported(self) -> bool {
        !matches!(self, SocketFamily::Unsupported(_))
    }

    pub fn is_ip(self) -> bool {
        matches!(self, SocketFamily::Inet | SocketFamily::Inet6)
    }
}

/// Local and remote address of a socket, as seen from the socket's owner.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SocketEndpoint {
    pub family: SocketFamily,
    #[serde(default)]
    pub protocol: u32,
    #[serde(default)]
    pub src_addr: String,
    #[serde(default)]
    pub src_port: u16,
    #[serde(default)]
    pub dst_addr: String,
    #[serde(default)]
    pub dst_port: u16,
    #[serde(default)]
    pub path: String,
}

impl SocketEndpoint {
    pub fn inet(protocol: u32, src: (&str, u16), dst: (&str, u16)) -> Self {
        Self {
            family: SocketFamily::Inet,
            protocol,
            src_addr: src.0.to_string(),
            src_port: src.1,
            dst_addr: dst.0.to_string(),
            dst_port: dst.1,
            path: String::new(),
        }
    }

    pub fn inet6(protocol: u32, src: (&str, u16), dst: (&str, u16)) -> Self {
        Self {
            family: SocketFamily::Inet6,
            ..Self::inet(protocol, src, dst)
        }
    }

    /// Unix endpoints have no ports; `src`/`dst` carry whatever names the
    /// kernel reports for the two ends (bound paths or socket inode labels).
    pub fn unix(path: &str, src: &str, dst: &str) -> Self {
        Self {
            family: SocketFamily::Unix,
            protocol: 0,
            src_addr: src.to_string(),
            src_port: 0,
            dst_addr: dst.to_string(),
            dst_port: 0,
            path: path.to_string(),
        }
    }

    /// The same connection seen from the other end.
    pub fn mirrored(&self) -> Self {
        Self {
            family: self.family,
            protocol: self.protocol,
            src_addr: self.dst_addr.clone(),
            src_port: self.dst_port,
            dst_addr: self.src_addr.clone(),
            dst_port: self.src_port,
            path: self.path.clone(),
        }
    }

    /// True when `other` is the far end of this endpoint's connection.
    pub fn mirrors(&self, other: &SocketEndpoint) -> bool {
        self.family == other.family
            && self.protocol == other.protocol
            && self.src_addr == other.dst_addr
            && self.src_port == other.dst_port
            && self.dst_addr == other.src_addr
            && self.dst_port == other.src_port
    }
}

/// What a metric sample is attributed to besides its thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resource {
    Bri(Bri),
    Futex(FutexRef),
    Device(DeviceRef),
    EpollFile { epoll: Bri, file: Bri },
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Bri(b) => b.fmt(f),
            Resource::Futex(x) => x.fmt(f),
            Resource::Device(d) => d.fmt(f),
            Resource::EpollFile { epoll, file } => write!(f, "{epoll}\u{2192}{file}"),
        }
    }
}
