//! Normalized kernel event vocabulary.
//!
//! Every probe point maps onto one [`EventKind`]. The aggregation engine, the
//! trace files and the scenario generator all speak this vocabulary.

use serde::{Deserialize, Serialize};

use crate::ids::{Bri, DeviceRef, SocketEndpoint};
use crate::metric::interval_of;

/// Task state recorded by the scheduler when a thread is switched out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    /// Still runnable (preempted).
    Running,
    Interruptible,
    Uninterruptible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum EventKind {
    SchedSwitchOut {
        prev_state: TaskState,
        #[serde(default)]
        iowait: bool,
    },
    SchedSwitchIn,
    SchedWakeup,
    ThreadExit,
    FifoIoEnter {
        bri: Bri,
    },
    FifoIoExit,
    SockRecvEnter {
        bri: Bri,
        endpoint: SocketEndpoint,
    },
    SockRecvExit,
    SockSendEnter {
        bri: Bri,
        endpoint: SocketEndpoint,
    },
    SockSendExit,
    FutexEnter {
        op: i32,
        uaddr: u64,
    },
    FutexExit {
        ret: i64,
    },
    /// select/poll entry with the resources behind every registered fd.
    PollfamEnter {
        bris: Vec<Bri>,
    },
    PollfamExit {
        bris: Vec<Bri>,
    },
    EpollInsert {
        epoll: Bri,
        target: Bri,
    },
    EpollRemove {
        epoll: Bri,
        target: Bri,
    },
    EpollWaitEnter {
        epoll: Bri,
    },
    EpollWaitExit {
        epoll: Bri,
    },
    BlockRequest {
        device: DeviceRef,
        sectors: u64,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SchedSwitchOut { .. } => "sched_switch_out",
            EventKind::SchedSwitchIn => "sched_switch_in",
            EventKind::SchedWakeup => "sched_wakeup",
            EventKind::ThreadExit => "thread_exit",
            EventKind::FifoIoEnter { .. } => "fifo_io_enter",
            EventKind::FifoIoExit => "fifo_io_exit",
            EventKind::SockRecvEnter { .. } => "sock_recv_enter",
            EventKind::SockRecvExit => "sock_recv_exit",
            EventKind::SockSendEnter { .. } => "sock_send_enter",
            EventKind::SockSendExit => "sock_send_exit",
            EventKind::FutexEnter { .. } => "futex_enter",
            EventKind::FutexExit { .. } => "futex_exit",
            EventKind::PollfamEnter { .. } => "pollfam_enter",
            EventKind::PollfamExit { .. } => "pollfam_exit",
            EventKind::EpollInsert { .. } => "epoll_insert",
            EventKind::EpollRemove { .. } => "epoll_remove",
            EventKind::EpollWaitEnter { .. } => "epoll_wait_enter",
            EventKind::EpollWaitExit { .. } => "epoll_wait_exit",
            EventKind::BlockRequest { .. } => "block_request",
        }
    }

    pub fn is_sched(&self) -> bool {
        matches!(
            self,
            EventKind::SchedSwitchOut { .. }
                | EventKind::SchedSwitchIn
                | EventKind::SchedWakeup
                | EventKind::ThreadExit
        )
    }

    /// Structural problems that make an event unusable regardless of context.
    pub fn validate(&self) -> Result<(), &'static str> {
        match self {
            EventKind::PollfamEnter { bris } | EventKind::PollfamExit { bris }
                if bris.is_empty() =>
            {
                Err("poll/select event with no registered resources")
            }
            EventKind::FifoIoEnter { bri } if bri.kind() != crate::ids::BriKind::Pipe => {
                Err("fifo event on a non-pipe resource")
            }
            EventKind::SockRecvEnter { bri, .. } | EventKind::SockSendEnter { bri, .. }
                if !bri.kind().is_socket() =>
            {
                Err("socket event on a non-socket resource")
            }
            EventKind::EpollInsert { epoll, .. }
            | EventKind::EpollRemove { epoll, .. }
            | EventKind::EpollWaitEnter { epoll }
            | EventKind::EpollWaitExit { epoll }
                if epoll.kind() != crate::ids::BriKind::Epoll =>
            {
                Err("epoll event on a non-epoll resource")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    #[serde(rename = "t")]
    pub t_ns: u64,
    pub tgid: u32,
    pub tid: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub comm: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl RawEvent {
    pub fn new(t_ns: u64, tgid: u32, tid: u32, comm: impl Into<String>, kind: EventKind) -> Self {
        Self {
            t_ns,
            tgid,
            tid,
            comm: comm.into(),
            kind,
        }
    }

    pub fn interval(&self) -> u64 {
        interval_of(self.t_ns)
    }
}

/// How a futex operation participates in the wait/wake metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FutexOpClass {
    Wait,
    Wake,
    Other,
}

pub mod futex_op {
    pub const WAIT: i32 = 0;
    pub const WAKE: i32 = 1;
    pub const FD: i32 = 2;
    pub const REQUEUE: i32 = 3;
    pub const CMP_REQUEUE: i32 = 4;
    pub const WAKE_OP: i32 = 5;
    pub const LOCK_PI: i32 = 6;
    pub const UNLOCK_PI: i32 = 7;
    pub const TRYLOCK_PI: i32 = 8;
    pub const WAIT_BITSET: i32 = 9;
    pub const WAKE_BITSET: i32 = 10;
    pub const WAIT_REQUEUE_PI: i32 = 11;
    pub const CMP_REQUEUE_PI: i32 = 12;
    pub const LOCK_PI2: i32 = 13;
    pub const PRIVATE_FLAG: i32 = 128;
    pub const CLOCK_REALTIME: i32 = 256;
    pub const CMD_MASK: i32 = !(PRIVATE_FLAG | CLOCK_REALTIME);
}

/// Classifies a raw futex `op` argument after stripping the private and
/// clock flag bits.
pub fn classify_futex_op(op: i32) -> FutexOpClass {
    use futex_op::*;
    match op & CMD_MASK {
        WAIT | WAIT_BITSET | LOCK_PI | WAIT_REQUEUE_PI => FutexOpClass::Wait,
        WAKE | WAKE_BITSET | UNLOCK_PI | REQUEUE | CMP_REQUEUE => FutexOpClass::Wake,
        _ => FutexOpClass::Other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::BriKind;

    #[test]
    fn futex_flags_are_stripped() {
        use futex_op::*;
        assert_eq!(classify_futex_op(WAIT | PRIVATE_FLAG), FutexOpClass::Wait);
        assert_eq!(
            classify_futex_op(WAIT_BITSET | PRIVATE_FLAG | CLOCK_REALTIME),
            FutexOpClass::Wait
        );
        assert_eq!(classify_futex_op(WAKE | PRIVATE_FLAG), FutexOpClass::Wake);
        assert_eq!(classify_futex_op(CMP_REQUEUE), FutexOpClass::Wake);
        assert_eq!(classify_futex_op(UNLOCK_PI), FutexOpClass::Wake);
        assert_eq!(classify_futex_op(LOCK_PI), FutexOpClass::Wait);
        for op in [FD, WAKE_OP, TRYLOCK_PI, CMP_REQUEUE_PI, LOCK_PI2, 99] {
            assert_eq!(classify_futex_op(op), FutexOpClass::Other, "op {op}");
        }
    }

    #[test]
    fn event_json_shape() {
        let ev = RawEvent::new(
            1_500_000_000,
            7,
            8,
            "worker",
            EventKind::FifoIoEnter {
                bri: Bri::from_inode(BriKind::Pipe, 14, 2159682).unwrap(),
            },
        );
        let line = serde_json::to_string(&ev).unwrap();
        assert_eq!(
            line,
            r#"{"t":1500000000,"tgid":7,"tid":8,"comm":"worker","ev":"fifo_io_enter","bri":"pipe:14_2159682"}"#
        );
        let back: RawEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back, ev);
        assert_eq!(back.interval(), 1);
    }

    #[test]
    fn structural_validation() {
        assert!(EventKind::PollfamExit { bris: vec![] }.validate().is_err());
        let sock = Bri::from_inode(BriKind::SocketInet, 8, 1).unwrap();
        assert!(EventKind::FifoIoEnter { bri: sock }.validate().is_err());
        assert!(EventKind::PollfamExit { bris: vec![sock] }
            .validate()
            .is_ok());
    }
}
