//! Live recording: pick a target, keep its communication scope, read kernel
//! summaries once per second and persist the per-interval differences.

pub mod backend;
pub mod config;
pub mod live;
pub mod procfs;
pub mod scope;
pub mod session;
pub mod sim;
pub mod wire;

use std::io;

use thiserror::Error;

pub use backend::{AttachReport, ProbeBackend, Summary};
pub use config::{LossyPolicy, SessionConfig, Target};
pub use live::{LiveBackend, DEFAULT_PIN_DIR, PIN_DIR_ENV};
pub use procfs::{resolve_target, ProcFs, ProcessTable};
pub use scope::{ScopeEntry, ScopeReason, ScopeState};
pub use session::{Clock, Interval, ManualClock, Session, SessionReport, SystemClock};
pub use sim::SimulatedKernel;
pub use wire::{DiscoveryRecord, WireError, WireKey, WireValue};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("target not found: {0}")]
    TargetNotFound(String),
    #[error("insufficient privilege: {0}")]
    Privilege(String),
    #[error("probe backend: {0}")]
    Backend(String),
    #[error("interval {interval}: {dropped} discovery records dropped")]
    Overflow { interval: u64, dropped: u64 },
    #[error("malformed kernel record: {0}")]
    Wire(#[from] WireError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}
