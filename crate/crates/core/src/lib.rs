//! Task-graph benchmark for measuring runtime-system overheads.
//!
//! A [`TaskGraph`] describes `timesteps × width` tasks connected by a
//! dependency pattern. [`backends::run`] executes it under one of several
//! execution models and times it; [`analysis`] turns timed runs into
//! efficiency curves and the minimum effective task granularity (METG).
//!
//! The analysis types are generic over the floating-point scalar. The
//! aliases below fix it to `f64`, which is what the command-line driver uses.

pub mod analysis;
pub mod backends;
pub mod graph;
pub mod kernel;

pub use analysis::{
    compute_metg, confidence_interval, efficiency, sweep, task_granularity, AnalysisError,
    CurvePoint, LiveRunner, MetgCurve, MetgResult, MetgState, PeakPolicy, PeakSource, Runner,
};
pub use backends::{
    run, shard_assignment, BackendConfig, BackendError, BackendKind, Medium, PriorityMode,
    RunResult, SchedulerConfig, TransportConfig, Watchdog, WorkerStack,
};
pub use graph::{build_graph, GraphError, GraphSpec, PatternKind, TaskGraph, TaskPoint};
pub use kernel::{
    calibrate, execute_kernel, peak_flops, Calibration, KernelConfig, KernelError, KernelKind,
    Precision,
};

pub type CurvePoint64 = CurvePoint<f64>;
pub type MetgCurve64 = MetgCurve<f64>;
pub type MetgResult64 = MetgResult<f64>;
pub type CurvePoint32 = CurvePoint<f32>;
pub type MetgCurve32 = MetgCurve<f32>;
pub type MetgResult32 = MetgResult<f32>;

/// SplitMix64 finalizer; the mixing step of every checksum in this crate.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
