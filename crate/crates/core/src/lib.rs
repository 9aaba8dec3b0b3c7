//! Thread-granular kernel metrics: resource identifiers, the raw event
//! vocabulary, the per-second aggregation engine and the metric store format.

pub mod engine;
pub mod event;
pub mod ids;
pub mod metric;
pub mod store;

pub use engine::{Counters, Engine, EngineError, SchedState};
pub use event::{classify_futex_op, futex_op, EventKind, FutexOpClass, RawEvent, TaskState};
pub use ids::{
    Bri, BriKind, DeviceRef, FutexRef, IdError, Resource, SocketEndpoint, SocketFamily, ThreadRef,
};
pub use metric::{
    interval_end, interval_of, interval_start, sort_samples, MetricKind, MetricSample,
    ResourceShape, NS_PER_SEC,
};
pub use store::{EndpointRecord, Store, StoreError, StoreRecord, StoreWriter};
