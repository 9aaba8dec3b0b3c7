//! Offline degradation analysis over a metric store: entrypoint detection,
//! KPI correlation, counterpart discovery, iterative thread tracking and
//! device share.

pub mod flag;
pub mod index;
pub mod kpi;
pub mod plot;
pub mod share;
pub mod track;

pub use flag::{flag_candidates, pearson, AnalysisError, Candidate, MIN_OVERLAP_S};
pub use index::{MetricIndex, SeriesKey, ThreadInfo, ThreadKey};
pub use kpi::{Direction, KpiError, KpiSeries};
pub use plot::write_plot_data;
pub use share::device_share;
pub use track::{
    counterpart_threads, detect_entrypoints, track, Counterpart, Edge, Mechanism, TrackingReport,
    REPORT_SCHEMA,
};
