//! Metrics over timed runs: task granularity, efficiency, METG and
//! confidence intervals, plus the grain-size sweep that produces curves.
//!
//! Everything here is generic over the float type `T`; measurements come in
//! as `f64` ([`RunResult`]) and are converted once.

mod metg;
mod stats;
mod sweep;

use std::fmt;

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

use crate::backends::{BackendError, RunResult};
use crate::graph::{GraphError, PatternKind};

pub use metg::{compute_metg, MetgResult, MetgState};
pub use stats::{confidence_interval, student_t_quantile, Interval};
pub use sweep::{sweep, LiveRunner, PeakPolicy, PeakSource, Runner, SweepError};

/// Float types the analysis is generic over.
pub trait Real: Float + FromPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static
{}

pub(crate) fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).unwrap_or_else(T::nan)
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("run executed zero tasks")]
    ZeroTasks,
    #[error("run reported zero wall time")]
    ZeroWallTime,
    #[error("peak FLOP/s must be positive")]
    NonPositivePeak,
    #[error("METG needs at least 2 curve points, got {0}")]
    TooFewPoints(usize),
    #[error("curve points must be sorted by grain size")]
    Unsorted,
    #[error("confidence interval needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("confidence level must lie in (0, 1)")]
    InvalidLevel,
    #[error("grain list is empty")]
    EmptyGrainList,
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Average cost per task in µs: `wall × cores / tasks`.
pub fn task_granularity<T: Real>(run: &RunResult, cores: usize) -> Result<T, AnalysisError> {
    if run.tasks_executed == 0 {
        return Err(AnalysisError::ZeroTasks);
    }
    Ok(granularity_us(
        real(run.wall_seconds),
        cores,
        run.tasks_executed,
    ))
}

pub(crate) fn granularity_us<T: Real>(wall_seconds: T, cores: usize, tasks: usize) -> T {
    wall_seconds * real(cores as f64) / real(tasks as f64) * real(1e6)
}

/// Achieved fraction of peak FLOP/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efficiency<T> {
    /// Clamped to `[0, 1]`.
    pub value: T,
    pub raw: T,
    /// Set when `raw > 1`, which means the declared peak is too low.
    pub calibration_anomaly: bool,
}

pub fn efficiency<T: Real>(run: &RunResult, peak_flops: T) -> Result<Efficiency<T>, AnalysisError> {
    efficiency_of(
        real(run.flops_executed as f64),
        real(run.wall_seconds),
        peak_flops,
    )
}

pub(crate) fn efficiency_of<T: Real>(
    flops: T,
    wall_seconds: T,
    peak_flops: T,
) -> Result<Efficiency<T>, AnalysisError> {
    if !(peak_flops > T::zero()) {
        return Err(AnalysisError::NonPositivePeak);
    }
    if !(wall_seconds > T::zero()) {
        return Err(AnalysisError::ZeroWallTime);
    }
    let raw = flops / wall_seconds / peak_flops;
    Ok(Efficiency {
        value: raw.max(T::zero()).min(T::one()),
        raw,
        calibration_anomaly: raw > T::one(),
    })
}

/// One aggregated point of an efficiency curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint<T> {
    pub grain_iterations: u64,
    pub granularity_us: T,
    pub efficiency: T,
    pub wall_seconds_mean: T,
    pub wall_seconds_ci99: T,
    pub repetitions: usize,
    /// FLOPs of one run.
    pub flops: u64,
    pub flops_per_second: T,
    pub tasks: usize,
    pub dataflow_checksum: u64,
    pub calibration_anomaly: bool,
}

/// Efficiency-vs-granularity curve of one backend configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MetgCurve<T> {
    pub backend: String,
    pub pattern: PatternKind,
    pub cores: usize,
    pub shards_per_core: usize,
    pub peak_flops: T,
    /// Sorted by `grain_iterations`.
    pub points: Vec<CurvePoint<T>>,
}

impl<T: Real> MetgCurve<T> {
    pub fn new(
        backend: impl Into<String>,
        pattern: PatternKind,
        cores: usize,
        shards_per_core: usize,
    ) -> Self {
        MetgCurve {
            backend: backend.into(),
            pattern,
            cores,
            shards_per_core,
            peak_flops: T::nan(),
            points: Vec::new(),
        }
    }

    /// Recomputes every point's efficiency against a new peak.
    pub fn renormalize(&mut self, peak_flops: T) -> Result<(), AnalysisError> {
        if !(peak_flops > T::zero()) {
            return Err(AnalysisError::NonPositivePeak);
        }
        self.peak_flops = peak_flops;
        for p in &mut self.points {
            let raw = p.flops_per_second / peak_flops;
            p.efficiency = raw.max(T::zero()).min(T::one());
            p.calibration_anomaly = raw > T::one();
        }
        Ok(())
    }

    /// Highest FLOP/s among the points, zero for an empty curve.
    pub fn best_flops_per_second(&self) -> T {
        self.points
            .iter()
            .map(|p| p.flops_per_second)
            .fold(T::zero(), T::max)
    }
}
