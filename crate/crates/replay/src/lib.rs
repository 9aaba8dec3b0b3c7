//! Event traces: generation of synthetic scenarios, a reference accumulator,
//! and replay through the aggregation engine into the metric store format.

pub mod generate;
pub mod oracle;
pub mod replay;
pub mod trace;

pub use generate::{
    generate, ExpectedEdge, GenerateError, Generated, GroundTruth, ScenarioKind, ScenarioSpec,
    TruthItem, EPOCH_WALL_S,
};
pub use oracle::oracle_accumulate;
pub use replay::{replay, replay_to_store, replay_with, ReplayError, ReplaySummary};
pub use trace::{Trace, TraceError, TraceHeader, TRACE_VERSION};
