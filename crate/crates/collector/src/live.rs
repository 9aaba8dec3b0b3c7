//! Reads the maps pinned by the kernel-probe loader.
//!
//! Only the map side lives here: the probes are loaded and pinned separately,
//! and this backend talks to them through the raw `bpf(2)` syscall.

use std::collections::BTreeSet;
use std::ffi::CString;
use std::io;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd, RawFd};
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::backend::{AttachReport, ProbeBackend, Summary};
use crate::wire::{DiscoveryRecord, WireKey, WireValue, DISCOVERY_SIZE, KEY_SIZE, VALUE_SIZE};
use crate::CollectError;

pub const DEFAULT_PIN_DIR: &str = "/sys/fs/bpf/kprism";
pub const PIN_DIR_ENV: &str = "KPRISM_PIN_DIR";

pub const MAP_ACCUM: &str = "accum";
pub const MAP_SCOPE: &str = "scope";
pub const MAP_EVENTS: &str = "events";
pub const MAP_DROPPED: &str = "dropped";

const BPF_MAP_LOOKUP_ELEM: libc::c_long = 1;
const BPF_MAP_UPDATE_ELEM: libc::c_long = 2;
const BPF_MAP_GET_NEXT_KEY: libc::c_long = 4;
const BPF_OBJ_GET: libc::c_long = 7;
const BPF_OBJ_GET_INFO_BY_FD: libc::c_long = 15;

const RINGBUF_BUSY_BIT: u32 = 1 << 31;
const RINGBUF_DISCARD_BIT: u32 = 1 << 30;
const RINGBUF_HDR_SZ: usize = 8;

/// Zeroed `union bpf_attr`, large enough for every command used here.
#[repr(C, align(8))]
struct Attr([u8; 128]);

impl Attr {
    fn new() -> Self {
        Attr([0; 128])
    }

    fn u32(&mut self, off: usize, v: u32) -> &mut Self {
        self.0[off..off + 4].copy_from_slice(&v.to_ne_bytes());
        self
    }

    fn u64(&mut self, off: usize, v: u64) -> &mut Self {
        self.0[off..off + 8].copy_from_slice(&v.to_ne_bytes());
        self
    }
}

fn bpf(cmd: libc::c_long, attr: &mut Attr) -> io::Result<libc::c_long> {
    // SAFETY: attr is a valid, zero-initialised bpf_attr of adequate size and
    // every pointer stored in it outlives the call.
    let r = unsafe {
        libc::syscall(
            libc::SYS_bpf,
            cmd,
            attr.0.as_mut_ptr(),
            attr.0.len() as libc::c_uint,
        )
    };
    if r < 0 {
        Err(io::Error::last_os_error())
    } else {
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct MapInfo {
    kind: u32,
    key_size: u32,
    value_size: u32,
    max_entries: u32,
}

#[derive(Debug)]
struct Map {
    fd: OwnedFd,
    info: MapInfo,
}

impl Map {
    fn open(path: &Path) -> Result<Map, CollectError> {
        if !path.exists() {
            return Err(CollectError::Backend(format!(
                "pinned map {} missing; are the kernel probes loaded?",
                path.display()
            )));
        }
        let c = CString::new(path.as_os_str().as_bytes())
            .map_err(|_| CollectError::Config(format!("bad path {}", path.display())))?;
        let mut attr = Attr::new();
        attr.u64(0, c.as_ptr() as u64);
        let fd = bpf(BPF_OBJ_GET, &mut attr).map_err(|e| os_error(e, path))?;
        // SAFETY: the kernel just handed us this descriptor.
        let fd = unsafe { OwnedFd::from_raw_fd(fd as RawFd) };

        let mut raw = [0u8; 80];
        let mut attr = Attr::new();
        attr.u32(0, fd.as_raw_fd() as u32)
            .u32(4, raw.len() as u32)
            .u64(8, raw.as_mut_ptr() as u64);
        bpf(BPF_OBJ_GET_INFO_BY_FD, &mut attr).map_err(|e| os_error(e, path))?;
        let word = |o: usize| u32::from_ne_bytes(raw[o..o + 4].try_into().unwrap());
        let info = MapInfo {
            kind: word(0),
            key_size: word(8),
            value_size: word(12),
            max_entries: word(16),
        };
        Ok(Map { fd, info })
    }

    fn lookup(&self, key: &[u8], value: &mut [u8]) -> io::Result<bool> {
        let mut attr = Attr::new();
        attr.u32(0, self.fd.as_raw_fd() as u32)
            .u64(8, key.as_ptr() as u64)
            .u64(16, value.as_mut_ptr() as u64);
        match bpf(BPF_MAP_LOOKUP_ELEM, &mut attr) {
            Ok(_) => Ok(true),
            Err(e) if e.raw_os_error() == Some(libc::ENOENT) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn update(&self, key: &[u8], value: &[u8]) -> io::Result<()> {
        let mut attr = Attr::new();
        attr.u32(0, self.fd.as_raw_fd() as u32)
            .u64(8, key.as_ptr() as u64)
            .u64(16, value.as_ptr() as u64);
        bpf(BPF_MAP_UPDATE_ELEM, &mut attr).map(|_| ())
    }

    fn next_key(&self, key: Option<&[u8]>, next: &mut [u8]) -> io::Result<bool> {
        let mut attr = Attr::new();
        attr.u32(0, self.fd.as_raw_fd() as u32)
            .u64(8, key.map_or(0, |k| k.as_ptr() as u64))
            .u64(16, next.as_mut_ptr() as u64);
        match bpf(BPF_MAP_GET_NEXT_KEY, &mut attr) {
            Ok(_) => Ok(true),
            Err(e) if e.raw_os_error() == Some(libc::ENOENT) => Ok(false),
            Err(e) => Err(e),
        }
    }
}

fn os_error(e: io::Error, path: &Path) -> CollectError {
    match e.raw_os_error() {
        Some(libc::EPERM) | Some(libc::EACCES) => {
            CollectError::Privilege(format!("{}: {e}", path.display()))
        }
        _ => CollectError::Backend(format!("{}: {e}", path.display())),
    }
}

/// Number of possible CPUs, which sizes per-CPU map values.
pub fn possible_cpus() -> io::Result<usize> {
    let text = std::fs::read_to_string("/sys/devices/system/cpu/possible")?;
    parse_cpu_list(text.trim())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("cpu list {text:?}")))
}

/// Counts the CPUs in a list such as `0-3,8,10-11`.
pub fn parse_cpu_list(s: &str) -> Option<usize> {
    let mut n = 0;
    for part in s.split(',').filter(|p| !p.is_empty()) {
        n += match part.split_once('-') {
            Some((a, b)) => {
                b.parse::<usize>()
                    .ok()?
                    .checked_sub(a.parse::<usize>().ok()?)?
                    + 1
            }
            None => {
                part.parse::<usize>().ok()?;
                1
            }
        };
    }
    (n > 0).then_some(n)
}

/// Sums the per-CPU shards of one accumulator value. Each shard occupies
/// `VALUE_SIZE` rounded up to 8 bytes.
pub fn sum_shards(raw: &[u8]) -> WireValue {
    raw.chunks_exact(VALUE_SIZE.next_multiple_of(8))
        .filter_map(|c| WireValue::decode(&c[..VALUE_SIZE]).ok())
        .fold(WireValue::default(), WireValue::saturating_add)
}

/// Walks committed ring-buffer records between `cons` and `prod`.
/// `data` is the data area mapped twice back to back, so a record that wraps
/// is still contiguous. Returns the new consumer position.
pub fn drain_ring<'a>(
    data: &'a [u8],
    mask: u64,
    mut cons: u64,
    prod: u64,
    out: &mut Vec<&'a [u8]>,
) -> u64 {
    while cons < prod {
        let at = (cons & mask) as usize;
        let word = u32::from_ne_bytes(data[at..at + 4].try_into().unwrap());
        if word & RINGBUF_BUSY_BIT != 0 {
            break;
        }
        let len = (word & !(RINGBUF_BUSY_BIT | RINGBUF_DISCARD_BIT)) as usize;
        if word & RINGBUF_DISCARD_BIT == 0 {
            out.push(&data[at + RINGBUF_HDR_SZ..at + RINGBUF_HDR_SZ + len]);
        }
        cons += (RINGBUF_HDR_SZ + len).next_multiple_of(8) as u64;
    }
    cons
}

#[derive(Debug)]
struct Ring {
    _map: Map,
    consumer: *mut u8,
    producer: *mut u8,
    page: usize,
    size: usize,
}

impl Ring {
    fn map(map: Map) -> Result<Ring, CollectError> {
        // SAFETY: sysconf has no memory-safety preconditions.
        let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) } as usize;
        let size = map.info.max_entries as usize;
        let fd = map.fd.as_raw_fd();
        // SAFETY: mapping layout of a BPF ring buffer: one writable consumer
        // page at offset 0, then the producer page followed by the data area
        // mapped twice, read-only.
        let consumer = unsafe {
            libc::mmap(
                ptr::null_mut(),
                page,
                libc::PROT_READ | libc::PROT_WRITE,
                libc::MAP_SHARED,
                fd,
                0,
            )
        };
        if consumer == libc::MAP_FAILED {
            return Err(CollectError::Backend(format!(
                "mmap ring consumer: {}",
                io::Error::last_os_error()
            )));
        }
        // SAFETY: as above.
        let producer = unsafe {
            libc::mmap(
                ptr::null_mut(),
                page + 2 * size,
                libc::PROT_READ,
                libc::MAP_SHARED,
                fd,
                page as libc::off_t,
            )
        };
        if producer == libc::MAP_FAILED {
            let e = io::Error::last_os_error();
            // SAFETY: consumer was mapped above with this length.
            unsafe { libc::munmap(consumer, page) };
            return Err(CollectError::Backend(format!("mmap ring producer: {e}")));
        }
        Ok(Ring {
            _map: map,
            consumer: consumer as *mut u8,
            producer: producer as *mut u8,
            page,
            size,
        })
    }

    fn drain(&mut self) -> Result<Vec<DiscoveryRecord>, CollectError> {
        // SAFETY: both positions are 8-byte aligned u64s at the start of
        // their pages and are only accessed atomically.
        let (cons_pos, prod_pos) = unsafe {
            (
                &*(self.consumer as *const AtomicU64),
                &*(self.producer as *const AtomicU64),
            )
        };
        let cons = cons_pos.load(Ordering::Acquire);
        let prod = prod_pos.load(Ordering::Acquire);
        // SAFETY: the data area is mapped twice right after the producer page.
        let data =
            unsafe { std::slice::from_raw_parts(self.producer.add(self.page), 2 * self.size) };
        let mut raw = Vec::new();
        let new_cons = drain_ring(data, self.size as u64 - 1, cons, prod, &mut raw);
        let mut out = Vec::with_capacity(raw.len());
        for r in raw {
            if r.len() < DISCOVERY_SIZE {
                log::warn!("short discovery record ({} bytes)", r.len());
                continue;
            }
            match DiscoveryRecord::decode(&r[..DISCOVERY_SIZE]) {
                Ok(rec) => out.push(rec),
                Err(e) => log::warn!("undecodable discovery record: {e}"),
            }
        }
        cons_pos.store(new_cons, Ordering::Release);
        Ok(out)
    }
}

impl Drop for Ring {
    fn drop(&mut self) {
        // SAFETY: unmapping exactly what Ring::map mapped.
        unsafe {
            libc::munmap(self.consumer as *mut libc::c_void, self.page);
            libc::munmap(
                self.producer as *mut libc::c_void,
                self.page + 2 * self.size,
            );
        }
    }
}

#[derive(Debug)]
struct Maps {
    accum: Map,
    scope: Map,
    dropped: Option<Map>,
    ring: Ring,
    ncpus: usize,
    last_dropped: u64,
}

/// Backend over the pinned maps of a loaded probe set.
#[derive(Debug)]
pub struct LiveBackend {
    pin_dir: PathBuf,
    maps: Option<Maps>,
}

impl LiveBackend {
    pub fn new(pin_dir: impl Into<PathBuf>) -> Self {
        Self {
            pin_dir: pin_dir.into(),
            maps: None,
        }
    }

    /// Uses `$KPRISM_PIN_DIR`, else the default pin directory.
    pub fn from_env() -> Self {
        Self::new(
            std::env::var_os(PIN_DIR_ENV)
                .map_or_else(|| PathBuf::from(DEFAULT_PIN_DIR), PathBuf::from),
        )
    }

    fn maps(&mut self) -> Result<&mut Maps, CollectError> {
        self.maps
            .as_mut()
            .ok_or_else(|| CollectError::Backend("not attached".into()))
    }

    fn read_dropped(maps: &Maps) -> Result<u64, CollectError> {
        let Some(m) = &maps.dropped else { return Ok(0) };
        let mut v = [0u8; 8];
        m.lookup(&0u32.to_ne_bytes(), &mut v)?;
        Ok(u64::from_ne_bytes(v))
    }
}

impl ProbeBackend for LiveBackend {
    fn attach(&mut self, members: &BTreeSet<u32>) -> Result<AttachReport, CollectError> {
        let accum = Map::open(&self.pin_dir.join(MAP_ACCUM))?;
        if accum.info.key_size as usize != KEY_SIZE || accum.info.value_size as usize != VALUE_SIZE
        {
            return Err(CollectError::Backend(format!(
                "accumulator map has {}-byte keys and {}-byte values, expected {KEY_SIZE}/{VALUE_SIZE}",
                accum.info.key_size, accum.info.value_size
            )));
        }
        let scope = Map::open(&self.pin_dir.join(MAP_SCOPE))?;
        let events = Map::open(&self.pin_dir.join(MAP_EVENTS))?;
        if !events.info.max_entries.is_power_of_two() {
            return Err(CollectError::Backend(
                "ring buffer size is not a power of two".into(),
            ));
        }
        let mut report = AttachReport::default();
        let dropped = match Map::open(&self.pin_dir.join(MAP_DROPPED)) {
            Ok(m) => Some(m),
            Err(CollectError::Backend(msg)) => {
                log::warn!("{msg}; overflow detection disabled");
                report.unavailable.push(MAP_DROPPED.to_string());
                None
            }
            Err(e) => return Err(e),
        };
        // Per-CPU hash and array types carry one value per possible CPU.
        let ncpus = if matches!(accum.info.kind, 5 | 6) {
            possible_cpus()?
        } else {
            1
        };
        let ring = Ring::map(events)?;
        let mut maps = Maps {
            accum,
            scope,
            dropped,
            ring,
            ncpus,
            last_dropped: 0,
        };
        for &tgid in members {
            maps.scope.update(&tgid.to_ne_bytes(), &[1u8])?;
        }
        maps.last_dropped = Self::read_dropped(&maps)?;
        report.attached = [MAP_ACCUM, MAP_SCOPE, MAP_EVENTS]
            .iter()
            .map(|s| s.to_string())
            .collect();
        self.maps = Some(maps);
        Ok(report)
    }

    fn add_scope_member(&mut self, tgid: u32) -> Result<(), CollectError> {
        self.maps()?.scope.update(&tgid.to_ne_bytes(), &[1u8])?;
        Ok(())
    }

    fn read_summaries(&mut self) -> Result<Summary, CollectError> {
        let maps = self.maps()?;
        let discovery = maps.ring.drain()?;
        let mut value = vec![0u8; VALUE_SIZE.next_multiple_of(8) * maps.ncpus];
        let mut entries = Vec::new();
        let mut key = [0u8; KEY_SIZE];
        let mut next = [0u8; KEY_SIZE];
        let mut first = true;
        while maps
            .accum
            .next_key((!first).then_some(&key[..]), &mut next)?
        {
            first = false;
            key = next;
            // Keys can be evicted between listing and lookup.
            if maps.accum.lookup(&key, &mut value)? {
                entries.push((WireKey::decode(&key)?, sum_shards(&value)));
            }
        }
        let total = Self::read_dropped(maps)?;
        let dropped = total.saturating_sub(maps.last_dropped);
        maps.last_dropped = total;
        Ok(Summary {
            entries,
            discovery,
            dropped,
        })
    }
}
