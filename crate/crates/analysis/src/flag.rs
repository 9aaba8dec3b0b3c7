use std::cmp::Ordering;

use kprism_core::MetricKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{MetricIndex, SeriesKey, ThreadInfo, ThreadKey};
use crate::kpi::KpiSeries;

/// Fewer overlapping seconds than this and correlation is not reported.
pub const MIN_OVERLAP_S: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("only {got} seconds overlap between KPI and metrics (need {MIN_OVERLAP_S})")]
    InsufficientOverlap { got: usize },
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(String),
    #[error("{0} is not an inter-thread communication metric")]
    NotIpc(MetricKind),
}

/// The seconds analysed: KPI seconds inside the metric span and the
/// optional explicit window (inclusive bounds).
pub fn analysis_seconds(
    index: &MetricIndex,
    kpi: &KpiSeries,
    window: Option<(u64, u64)>,
) -> Result<Vec<u64>, AnalysisError> {
    let seconds: Vec<u64> = match index.span() {
        None => Vec::new(),
        Some((lo, hi)) => {
            let (lo, hi) = match window {
                Some((a, b)) => (lo.max(a), hi.min(b)),
                None => (lo, hi),
            };
            kpi.points()
                .iter()
                .map(|p| p.0)
                .filter(|t| (lo..=hi).contains(t))
                .collect()
        }
    };
    if seconds.len() < MIN_OVERLAP_S {
        return Err(AnalysisError::InsufficientOverlap { got: seconds.len() });
    }
    Ok(seconds)
}

/// Pearson correlation, or `None` when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.is_empty() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Scores are compared at this precision, so that rescaling the KPI cannot
/// reorder candidates through floating-point noise.
fn quantize(r: f64) -> f64 {
    (r * 1e12).round() / 1e12
}

/// Relative change of the mean between the first and last quarter.
pub fn quartile_shift(values: &[f64]) -> f64 {
    let q = (values.len() / 4).max(1);
    let first = values[..q].iter().sum::<f64>() / q as f64;
    let last = values[values.len() - q..].iter().sum::<f64>() / q as f64;
    if first == 0.0 {
        if last == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((last - first) / first).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub subject: ThreadInfo,
    pub resource: Option<String>,
    pub metric: MetricKind,
    pub score: f64,
    /// Inclusive wall seconds the score was computed over.
    pub window: (u64, u64),
    #[serde(skip)]
    pub shift: f64,
}

impl Candidate {
    pub fn thread(&self) -> ThreadKey {
        (self.subject.tgid, self.subject.tid)
    }

    pub fn series_key(&self) -> SeriesKey {
        SeriesKey {
            tgid: self.subject.tgid,
            tid: self.subject.tid,
            metric: self.metric,
            res: self.resource.clone().unwrap_or_default(),
        }
    }
}

/// Ranking: |score| descending, then larger quartile shift, then series key.
pub fn rank(candidates: &mut [Candidate]) {
    candidates.sort_by(|a, b| {
        b.score
            .abs()
            .partial_cmp(&a.score.abs())
            .unwrap_or(Ordering::Equal)
            .then(b.shift.partial_cmp(&a.shift).unwrap_or(Ordering::Equal))
            .then_with(|| a.series_key().cmp(&b.series_key()))
    });
}

/// Scores every series of the threads accepted by `only` and keeps those
/// with |r| at or above `threshold`.
pub fn flag_candidates_where<F>(
    index: &MetricIndex,
    kpi: &KpiSeries,
    threshold: f64,
    window: Option<(u64, u64)>,
    only: F,
) -> Result<Vec<Candidate>, AnalysisError>
where
    F: Fn(ThreadKey) -> bool,
{
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AnalysisError::BadThreshold(threshold.to_string()));
    }
    let seconds = analysis_seconds(index, kpi, window)?;
    let target: Vec<f64> = seconds
        .iter()
        .map(|s| {
            kpi.oriented(*s)
                .expect("analysis seconds come from the KPI")
        })
        .collect();
    let span = (seconds[0], seconds[seconds.len() - 1]);
    let mut out = Vec::new();
    for (key, _) in index.series() {
        if !only(key.thread()) {
            continue;
        }
        let values = index.values(key, &seconds);
        let Some(r) = pearson(&values, &target).map(quantize) else {
            continue;
        };
        if r.abs() >= threshold {
            out.push(Candidate {
                subject: index.thread_info(key.thread()),
                resource: (!key.res.is_empty()).then(|| key.res.clone()),
                metric: key.metric,
                score: r,
                window: span,
                shift: quartile_shift(&values),
            });
        }
    }
    rank(&mut out);
    Ok(out)
}

pub fn flag_candidates(
    index: &MetricIndex,
    kpi: &KpiSeries,
    threshold: f64,
    window: Option<(u64, u64)>,
) -> Result<Vec<Candidate>, AnalysisError> {
    flag_candidates_where(index, kpi, threshold, window, |_| true)
}
