//! Compute-bound task kernel and its host calibration.
//!
//! One kernel iteration updates [`ACCUMULATORS`] independent multiply-add
//! chains, so it performs exactly [`FLOPS_PER_ITERATION`] floating-point
//! operations. The accumulator scalar is generic; [`Precision`] picks the
//! instantiation at run time.

use std::fmt;
use std::hint::black_box;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mix64;

pub const ACCUMULATORS: usize = 16;
pub const FLOPS_PER_ITERATION: u64 = 2 * ACCUMULATORS as u64;

const CALIBRATION_SAMPLES: usize = 9;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("the empty kernel performs no work and cannot be calibrated")]
    EmptyKernel,
    #[error("timer cannot resolve {target:?} (observed tick {tick:?})")]
    ClockResolution { target: Duration, tick: Duration },
    #[error("calibration target must be at least 1 ms, got {0:?}")]
    TargetTooShort(Duration),
    #[error("calibration file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    ComputeBound,
    Empty,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::ComputeBound => "compute_bound",
            KernelKind::Empty => "empty",
        })
    }
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compute_bound" | "compute" => Ok(KernelKind::ComputeBound),
            "empty" => Ok(KernelKind::Empty),
            other => Err(format!("unknown kernel kind `{other}`")),
        }
    }
}

/// Accumulator scalar used by the compute-bound kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Grain size: kernel iterations per task.
    pub iterations: u64,
    pub precision: Precision,
}

impl KernelConfig {
    pub fn compute_bound(iterations: u64) -> Self {
        KernelConfig {
            kind: KernelKind::ComputeBound,
            iterations,
            precision: Precision::F64,
        }
    }

    pub fn empty() -> Self {
        KernelConfig {
            kind: KernelKind::Empty,
            iterations: 0,
            precision: Precision::F64,
        }
    }

    pub fn with_iterations(mut self, iterations: u64) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    /// Constant of the kernel implementation, reported alongside every result.
    pub fn flops_per_iteration(&self) -> u64 {
        FLOPS_PER_ITERATION
    }

    /// FLOPs one task performs.
    pub fn flops_per_task(&self) -> u64 {
        match self.kind {
            KernelKind::ComputeBound => self.iterations * FLOPS_PER_ITERATION,
            KernelKind::Empty => 0,
        }
    }
}

/// Runs one task's kernel and returns a checksum that depends on the seed
/// and on every accumulator, so the loop cannot be elided.
pub fn execute_kernel(config: &KernelConfig, seed: u64) -> u64 {
    match config.kind {
        KernelKind::Empty => mix64(seed ^ 0xE3A7_7C0D_5F1B_2A49),
        KernelKind::ComputeBound => match config.precision {
            Precision::F32 => compute::<f32>(config.iterations, seed),
            Precision::F64 => compute::<f64>(config.iterations, seed),
        },
    }
}

/// The multiply-add chain kernel over scalar `T`.
pub fn compute<T: Float>(iterations: u64, seed: u64) -> u64 {
    let mut acc = [T::zero(); ACCUMULATORS];
    for (k, a) in acc.iter_mut().enumerate() {
        let bits = mix64(seed.wrapping_add(k as u64)) >> 40;
        *a = T::from(bits as f64 / (1u64 << 24) as f64).unwrap_or_else(T::zero);
    }
    // Contracting map: every chain converges towards add / (1 - mul).
    let mul = black_box(T::from(0.999_9).unwrap_or_else(T::one));
    let add = black_box(T::from(0.001).unwrap_or_else(T::zero));
    for _ in 0..iterations {
        for a in acc.iter_mut() {
            *a = *a * mul + add;
        }
    }
    let acc = black_box(acc);
    acc.iter().fold(mix64(seed), |h, a| {
        let (mantissa, exponent, sign) = a.integer_decode();
        mix64(h ^ mantissa ^ ((exponent as u16 as u64) << 48) ^ ((sign as u8 as u64) << 63))
    })
}

/// Measured cost of one kernel iteration on this host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub ns_per_iteration: f64,
    pub samples: usize,
    /// (max - min) / median over the timed samples.
    pub dispersion: f64,
    pub flops_per_iteration: u64,
    pub precision: Precision,
    pub iterations_per_sample: u64,
    /// Seconds since the Unix epoch at calibration time.
    pub timestamp: u64,
    pub host_id: String,
}

impl Calibration {
    /// Builds a calibration record from a known per-iteration cost.
    pub fn from_ns_per_iteration(ns_per_iteration: f64) -> Self {
        Calibration {
            ns_per_iteration,
            samples: 1,
            dispersion: 0.0,
            flops_per_iteration: FLOPS_PER_ITERATION,
            precision: Precision::F64,
            iterations_per_sample: 0,
            timestamp: 0,
            host_id: host_id(),
        }
    }

    /// Short stable hash identifying this calibration in result rows.
    pub fn fingerprint(&self) -> String {
        let mut h = mix64(self.ns_per_iteration.to_bits());
        h = mix64(h ^ self.flops_per_iteration);
        h = mix64(h ^ self.timestamp);
        for b in self.host_id.bytes() {
            h = mix64(h ^ b as u64);
        }
        format!("{:016x}", h)
    }

    pub fn predicted_task_seconds(&self, iterations: u64) -> f64 {
        iterations as f64 * self.ns_per_iteration * 1e-9
    }

    pub fn save(&self, path: &Path) -> Result<(), KernelError> {
        let text = toml::to_string(self).map_err(|e| file_error(path, e))?;
        std::fs::write(path, text).map_err(|e| file_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, KernelError> {
        let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
        let cal: Calibration = toml::from_str(&text).map_err(|e| file_error(path, e))?;
        if !(cal.ns_per_iteration > 0.0) {
            return Err(file_error(path, "ns_per_iteration must be positive"));
        }
        Ok(cal)
    }
}

fn file_error(path: &Path, e: impl fmt::Display) -> KernelError {
    KernelError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn host_id() -> String {
    std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Smallest nonzero step observed on the monotonic clock.
fn clock_tick() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Measures ns per kernel iteration.
///
/// Iteration counts grow geometrically until one timed sample exceeds
/// `target`; then nine samples at that count are taken and the
/// median is reported. Single-threaded; run on an otherwise idle process.
pub fn calibrate(
    kind: KernelKind,
    precision: Precision,
    target: Duration,
) -> Result<Calibration, KernelError> {
    if kind == KernelKind::Empty {
        return Err(KernelError::EmptyKernel);
    }
    if target < Duration::from_millis(1) {
        return Err(KernelError::TargetTooShort(target));
    }
    let tick = clock_tick();
    if tick * 100 > target {
        return Err(KernelError::ClockResolution { target, tick });
    }
    let config = KernelConfig::compute_bound(0).with_precision(precision);
    let time = |iterations: u64| {
        let cfg = config.with_iterations(iterations);
        let start = Instant::now();
        black_box(execute_kernel(&cfg, black_box(iterations)));
        start.elapsed()
    };

    let mut iterations = 1024u64;
    loop {
        if time(iterations) > target {
            break;
        }
        iterations = iterations
            .checked_mul(2)
            .ok_or(KernelError::ClockResolution { target, tick })?;
    }

    let mut per_iter: Vec<f64> = (0..CALIBRATION_SAMPLES)
        .map(|_| time(iterations).as_nanos() as f64 / iterations as f64)
        .collect();
    per_iter.sort_by(f64::total_cmp);
    let median = per_iter[per_iter.len() / 2];
    let dispersion = (per_iter[per_iter.len() - 1] - per_iter[0]) / median;
    Ok(Calibration {
        ns_per_iteration: median,
        samples: per_iter.len(),
        dispersion,
        flops_per_iteration: FLOPS_PER_ITERATION,
        precision,
        iterations_per_sample: iterations,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        host_id: host_id(),
    })
}

/// Peak FLOP/s of `cores` cores running the kernel back to back.
pub fn peak_flops(calibration: &Calibration, cores: usize) -> f64 {
    cores as f64 * calibration.flops_per_iteration as f64 * 1e9 / calibration.ns_per_iteration
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_iterations_depend_only_on_seed() {
        let cfg = KernelConfig::compute_bound(0);
        assert_eq!(execute_kernel(&cfg, 7), execute_kernel(&cfg, 7));
        assert_ne!(execute_kernel(&cfg, 7), execute_kernel(&cfg, 8));
    }

    #[test]
    fn deterministic() {
        let cfg = KernelConfig::compute_bound(1000);
        assert_eq!(execute_kernel(&cfg, 7), execute_kernel(&cfg, 7));
        let cfg32 = cfg.with_precision(Precision::F32);
        assert_eq!(execute_kernel(&cfg32, 7), execute_kernel(&cfg32, 7));
    }

    #[test]
    fn checksum_tracks_iterations() {
        let a = execute_kernel(&KernelConfig::compute_bound(10), 7);
        let b = execute_kernel(&KernelConfig::compute_bound(11), 7);
        assert_ne!(a, b);
    }

    #[test]
    fn empty_kernel_ignores_iterations() {
        let c0 = execute_kernel(&KernelConfig::empty(), 3);
        let c1 = execute_kernel(&KernelConfig::empty().with_iterations(1 << 40), 3);
        assert_eq!(c0, c1);
        assert_eq!(
            KernelConfig::empty().with_iterations(99).flops_per_task(),
            0
        );
    }

    #[test]
    fn flop_accounting() {
        assert_eq!(FLOPS_PER_ITERATION, 32);
        assert_eq!(KernelConfig::compute_bound(4).flops_per_task(), 128);
    }

    #[test]
    fn empty_kernel_cannot_be_calibrated() {
        let err = calibrate(KernelKind::Empty, Precision::F64, Duration::from_millis(5));
        assert!(matches!(err, Err(KernelError::EmptyKernel)));
    }

    #[test]
    fn target_below_one_ms_rejected() {
        let err = calibrate(
            KernelKind::ComputeBound,
            Precision::F64,
            Duration::from_micros(500),
        );
        assert!(matches!(err, Err(KernelError::TargetTooShort(_))));
    }

    #[test]
    fn peak_unit_arithmetic() {
        let mut cal = Calibration::from_ns_per_iteration(1.0);
        cal.flops_per_iteration = 2;
        assert_eq!(peak_flops(&cal, 1), 2e9);
    }

    #[test]
    fn calibration_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.toml");
        let mut cal = Calibration::from_ns_per_iteration(2.345_678_901_234_5);
        cal.dispersion = 0.012_345;
        cal.timestamp = 1_700_000_000;
        cal.save(&path).unwrap();
        assert_eq!(Calibration::load(&path).unwrap(), cal);
    }
}
