use std::collections::{BTreeMap, BTreeSet, VecDeque};

use kprism_core::{Bri, SocketEndpoint, SocketFamily};

use crate::wire::DiscoveryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScopeReason {
    Initial,
    PipePeer,
    SocketPeer,
}

impl ScopeReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ScopeReason::Initial => "initial",
            ScopeReason::PipePeer => "pipe_peer",
            ScopeReason::SocketPeer => "socket_peer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeEntry {
    pub t_ns: u64,
    pub tgid: u32,
    pub reason: ScopeReason,
}

type ConnKey = (SocketFamily, u32, String, u16, String, u16);

fn conn_key(ep: &SocketEndpoint) -> ConnKey {
    (
        ep.family,
        ep.protocol,
        ep.src_addr.clone(),
        ep.src_port,
        ep.dst_addr.clone(),
        ep.dst_port,
    )
}

/// The set of monitored thread groups and how each one joined.
///
/// Membership grows by communication: a pipe BRI used by a member and a
/// non-member, or a socket connection whose two ends belong to a member and
/// a non-member, pulls the non-member in. Growth is transitive.
#[derive(Debug, Clone, Default)]
pub struct ScopeState {
    members: BTreeSet<u32>,
    log: Vec<ScopeEntry>,
    links: BTreeMap<u32, BTreeSet<(u32, ScopeReason)>>,
    pipe_users: BTreeMap<Bri, BTreeSet<u32>>,
    socket_owners: BTreeMap<Bri, BTreeSet<u32>>,
    connections: BTreeMap<ConnKey, BTreeSet<u32>>,
}

impl ScopeState {
    pub fn new(initial: &BTreeSet<u32>, t_ns: u64) -> Self {
        let mut s = ScopeState::default();
        for &tgid in initial {
            s.members.insert(tgid);
            s.log.push(ScopeEntry {
                t_ns,
                tgid,
                reason: ScopeReason::Initial,
            });
        }
        s
    }

    pub fn members(&self) -> &BTreeSet<u32> {
        &self.members
    }

    pub fn is_member(&self, tgid: u32) -> bool {
        self.members.contains(&tgid)
    }

    pub fn discovery_log(&self) -> &[ScopeEntry] {
        &self.log
    }

    fn link(&mut self, a: u32, b: u32, reason: ScopeReason) {
        if a != b {
            self.links.entry(a).or_default().insert((b, reason));
            self.links.entry(b).or_default().insert((a, reason));
        }
    }

    /// Records one discovery and returns the tgids that joined because of it.
    pub fn observe(&mut self, rec: &DiscoveryRecord) -> Vec<ScopeEntry> {
        match rec {
            DiscoveryRecord::Pipe { tgid, bri, .. } => {
                let users = self.pipe_users.entry(*bri).or_default();
                let others: Vec<u32> = users.iter().copied().collect();
                users.insert(*tgid);
                for o in others {
                    self.link(*tgid, o, ScopeReason::PipePeer);
                }
            }
            DiscoveryRecord::Socket {
                tgid,
                bri,
                endpoint,
                ..
            } => {
                if !endpoint.family.is_supported() {
                    return Vec::new();
                }
                let owners = self.socket_owners.entry(*bri).or_default();
                let mut others: Vec<u32> = owners.iter().copied().collect();
                owners.insert(*tgid);
                if let Some(far) = self.connections.get(&conn_key(&endpoint.mirrored())) {
                    others.extend(far.iter().copied());
                }
                self.connections
                    .entry(conn_key(endpoint))
                    .or_default()
                    .insert(*tgid);
                for o in others {
                    self.link(*tgid, o, ScopeReason::SocketPeer);
                }
            }
            DiscoveryRecord::Comm { .. } | DiscoveryRecord::EpollCtl { .. } => return Vec::new(),
        }
        self.close(rec.ts_ns())
    }

    fn close(&mut self, t_ns: u64) -> Vec<ScopeEntry> {
        let mut queue: VecDeque<u32> = self.members.iter().copied().collect();
        let mut added = Vec::new();
        while let Some(m) = queue.pop_front() {
            let Some(peers) = self.links.get(&m) else {
                continue;
            };
            for &(peer, reason) in peers {
                if self.members.insert(peer) {
                    let entry = ScopeEntry {
                        t_ns,
                        tgid: peer,
                        reason,
                    };
                    self.log.push(entry.clone());
                    added.push(entry);
                    queue.push_back(peer);
                }
            }
        }
        added
    }
}
