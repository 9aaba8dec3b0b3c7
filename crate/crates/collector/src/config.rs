use std::fmt;
use std::path::PathBuf;

use crate::CollectError;

/// Which process(es) a session starts from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Tgid(u32),
    /// Every live process whose command name matches.
    Comm(String),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Tgid(t) => write!(f, "tgid {t}"),
            Target::Comm(c) => write!(f, "command {c:?}"),
        }
    }
}

/// What to do when the kernel reports dropped discovery records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LossyPolicy {
    /// Keep going and mark the interval's samples.
    #[default]
    Mark,
    /// Stop the session after flushing what was already written.
    Abort,
}

impl std::str::FromStr for LossyPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mark" => Ok(LossyPolicy::Mark),
            "abort" => Ok(LossyPolicy::Abort),
            other => Err(format!("unknown lossy policy {other:?} (mark|abort)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    pub target: Target,
    pub duration_s: u64,
    pub output_path: PathBuf,
    pub lossy_policy: LossyPolicy,
}

impl SessionConfig {
    /// Summaries are read once per second; not configurable.
    pub const INTERVAL_S: u64 = 1;

    pub fn validate(&self) -> Result<(), CollectError> {
        if self.duration_s == 0 {
            return Err(CollectError::Config("duration must be at least 1 s".into()));
        }
        match &self.target {
            Target::Tgid(0) => Err(CollectError::Config("tgid 0 is not a process".into())),
            Target::Comm(c) if c.is_empty() => {
                Err(CollectError::Config("empty command name".into()))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(target: Target, duration_s: u64) -> SessionConfig {
        SessionConfig {
            target,
            duration_s,
            output_path: "out.ndjson".into(),
            lossy_policy: LossyPolicy::Mark,
        }
    }

    #[test]
    fn zero_duration_rejected() {
        assert!(matches!(
            cfg(Target::Tgid(1234), 0).validate(),
            Err(CollectError::Config(_))
        ));
        assert!(cfg(Target::Tgid(1234), 1).validate().is_ok());
    }

    #[test]
    fn empty_targets_rejected() {
        assert!(cfg(Target::Tgid(0), 5).validate().is_err());
        assert!(cfg(Target::Comm(String::new()), 5).validate().is_err());
    }

    #[test]
    fn policy_parses() {
        assert_eq!("abort".parse::<LossyPolicy>(), Ok(LossyPolicy::Abort));
        assert!("drop".parse::<LossyPolicy>().is_err());
    }
}
