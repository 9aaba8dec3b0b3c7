use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::PathBuf;

use crate::config::Target;
use crate::CollectError;

/// The kernel truncates task names to this many bytes.
pub const TASK_COMM_LEN: usize = 15;

/// Source of the live process list.
pub trait ProcessTable {
    /// `(tgid, comm)` of every live process.
    fn processes(&self) -> io::Result<Vec<(u32, String)>>;
}

/// Reads `<root>/<pid>/comm`; `root` is `/proc` outside of tests.
#[derive(Debug, Clone)]
pub struct ProcFs {
    pub root: PathBuf,
}

impl Default for ProcFs {
    fn default() -> Self {
        Self {
            root: PathBuf::from("/proc"),
        }
    }
}

impl ProcessTable for ProcFs {
    fn processes(&self) -> io::Result<Vec<(u32, String)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let Some(tgid) = entry
                .file_name()
                .to_str()
                .and_then(|n| n.parse::<u32>().ok())
            else {
                continue;
            };
            // Processes can exit between listing and reading.
            match fs::read_to_string(entry.path().join("comm")) {
                Ok(comm) => out.push((tgid, comm.trim_end_matches('\n').to_string())),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        out.sort();
        Ok(out)
    }
}

impl<T: ProcessTable + ?Sized> ProcessTable for &T {
    fn processes(&self) -> io::Result<Vec<(u32, String)>> {
        (**self).processes()
    }
}

/// Fixed process list.
impl ProcessTable for Vec<(u32, String)> {
    fn processes(&self) -> io::Result<Vec<(u32, String)>> {
        Ok(self.clone())
    }
}

fn truncate_comm(name: &str) -> &str {
    let mut end = name.len().min(TASK_COMM_LEN);
    while !name.is_char_boundary(end) {
        end -= 1;
    }
    &name[..end]
}

/// Live tgids designated by `target`.
pub fn resolve_target(
    table: &dyn ProcessTable,
    target: &Target,
) -> Result<BTreeSet<u32>, CollectError> {
    let procs = table.processes()?;
    let found: BTreeSet<u32> = match target {
        Target::Tgid(t) => procs.iter().filter(|p| p.0 == *t).map(|p| p.0).collect(),
        Target::Comm(name) => {
            let want = truncate_comm(name);
            procs.iter().filter(|p| p.1 == want).map(|p| p.0).collect()
        }
    };
    if found.is_empty() {
        return Err(CollectError::TargetNotFound(target.to_string()));
    }
    Ok(found)
}
