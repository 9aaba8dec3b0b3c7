use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Latency-like KPIs.
    #[default]
    HigherIsWorse,
    /// Throughput-like KPIs; negated before correlation.
    LowerIsWorse,
}

#[derive(Debug, Error)]
pub enum KpiError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("kpi csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("kpi row {row}: {reason}")]
    Invalid { row: usize, reason: String },
}

/// A KPI sampled once per wall-clock second.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiSeries {
    points: Vec<(u64, f64)>,
    pub direction: Direction,
}

#[derive(Debug, Deserialize)]
struct Row {
    ts: f64,
    value: f64,
}

impl KpiSeries {
    /// Timestamps must be strictly increasing whole seconds.
    pub fn new(points: Vec<(u64, f64)>, direction: Direction) -> Result<Self, KpiError> {
        for (i, w) in points.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(KpiError::Invalid {
                    row: i + 2,
                    reason: format!("timestamp {} does not follow {}", w[1].0, w[0].0),
                });
            }
        }
        if let Some(i) = points.iter().position(|p| !p.1.is_finite()) {
            return Err(KpiError::Invalid {
                row: i + 1,
                reason: "value is not finite".into(),
            });
        }
        Ok(Self { points, direction })
    }

    /// Reads `ts,value` CSV. Fractional timestamps are floored to seconds.
    pub fn from_csv<R: Read>(input: R, direction: Direction) -> Result<Self, KpiError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut points = Vec::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row?;
            if !row.ts.is_finite() || row.ts < 0.0 {
                return Err(KpiError::Invalid {
                    row: i + 1,
                    reason: format!("bad timestamp {}", row.ts),
                });
            }
            points.push((row.ts.floor() as u64, row.value));
        }
        Self::new(points, direction)
    }

    pub fn open(path: &Path, direction: Direction) -> Result<Self, KpiError> {
        Self::from_csv(std::fs::File::open(path)?, direction)
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    /// Values oriented so that larger always means worse.
    pub fn oriented(&self, ts: u64) -> Option<f64> {
        let i = self.points.binary_search_by_key(&ts, |p| p.0).ok()?;
        let v = self.points[i].1;
        Some(match self.direction {
            Direction::HigherIsWorse => v,
            Direction::LowerIsWorse => -v,
        })
    }

    pub fn span(&self) -> Option<(u64, u64)> {
        Some((self.points.first()?.0, self.points.last()?.0))
    }
}
