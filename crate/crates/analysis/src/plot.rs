use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::flag::{analysis_seconds, Candidate};
use crate::index::MetricIndex;
use crate::kpi::KpiSeries;

fn file_name(c: &Candidate) -> String {
    let res: String = c
        .resource
        .as_deref()
        .unwrap_or("")
        .chars()
        .map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '_' })
        .collect();
    let mut name = format!("{}-{}-{}", c.subject.tgid, c.subject.tid, c.metric);
    if !res.is_empty() {
        name.push('-');
        name.push_str(&res);
    }
    name + ".csv"
}

/// Writes `second,value` CSVs for the KPI and every candidate series over the
/// analysed seconds.
pub fn write_plot_data(
    dir: &Path,
    index: &MetricIndex,
    kpi: &KpiSeries,
    window: Option<(u64, u64)>,
    candidates: &[Candidate],
) -> io::Result<usize> {
    let seconds = analysis_seconds(index, kpi, window)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    std::fs::create_dir_all(dir)?;
    let mut text = String::from("second,value\n");
    for s in &seconds {
        let _ = writeln!(text, "{s},{}", kpi.oriented(*s).unwrap_or_default());
    }
    std::fs::write(dir.join("kpi.csv"), text)?;
    for c in candidates {
        let values = index.values(&c.series_key(), &seconds);
        let mut text = String::from("second,value\n");
        for (s, v) in seconds.iter().zip(values) {
            let _ = writeln!(text, "{s},{v}");
        }
        std::fs::write(dir.join(file_name(c)), text)?;
    }
    Ok(candidates.len() + 1)
}
