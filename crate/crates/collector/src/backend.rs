use std::collections::BTreeSet;

use crate::wire::{DiscoveryRecord, WireKey, WireValue};
use crate::CollectError;

/// One snapshot of the kernel side.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Summary {
    /// Cumulative accumulators, per-CPU shards already summed.
    pub entries: Vec<(WireKey, WireValue)>,
    /// Discovery records drained since the previous read.
    pub discovery: Vec<DiscoveryRecord>,
    /// Discovery records the kernel failed to queue since the previous read.
    pub dropped: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttachReport {
    pub attached: Vec<String>,
    /// Optional probe points that could not be attached.
    pub unavailable: Vec<String>,
}

/// Where summaries come from: the in-kernel probes or a simulation of them.
pub trait ProbeBackend {
    fn attach(&mut self, members: &BTreeSet<u32>) -> Result<AttachReport, CollectError>;

    /// Takes effect from the next interval on.
    fn add_scope_member(&mut self, tgid: u32) -> Result<(), CollectError>;

    fn read_summaries(&mut self) -> Result<Summary, CollectError>;
}

impl<B: ProbeBackend + ?Sized> ProbeBackend for Box<B> {
    fn attach(&mut self, members: &BTreeSet<u32>) -> Result<AttachReport, CollectError> {
        (**self).attach(members)
    }

    fn add_scope_member(&mut self, tgid: u32) -> Result<(), CollectError> {
        (**self).add_scope_member(tgid)
    }

    fn read_summaries(&mut self) -> Result<Summary, CollectError> {
        (**self).read_summaries()
    }
}

impl<B: ProbeBackend + ?Sized> ProbeBackend for &mut B {
    fn attach(&mut self, members: &BTreeSet<u32>) -> Result<AttachReport, CollectError> {
        (**self).attach(members)
    }

    fn add_scope_member(&mut self, tgid: u32) -> Result<(), CollectError> {
        (**self).add_scope_member(tgid)
    }

    fn read_summaries(&mut self) -> Result<Summary, CollectError> {
        (**self).read_summaries()
    }
}
