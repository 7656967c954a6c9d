//! CSV row schemas and the METG table derived from curve rows.
//!
//! The first sixteen `CurveRow` columns are the fixed schema; the rest is
//! provenance metadata (tool version, calibration fingerprint, scheduler
//! knobs, kernel) carried by every row.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tgbench::{
    compute_metg, BackendConfig, Calibration, CurvePoint, GraphSpec, MetgCurve, MetgState,
    PatternKind,
};

use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Untimed runs a sweep performs before each grain's timed repetitions.
pub const SWEEP_WARMUP_RUNS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub backend: String,
    pub pattern: String,
    pub cores: usize,
    pub shards_per_core: usize,
    pub width: usize,
    pub steps: usize,
    pub grain_iterations: u64,
    pub output_bytes: usize,
    pub wall_seconds_mean: f64,
    pub wall_seconds_ci99: f64,
    pub flops: u64,
    pub flops_per_second: f64,
    pub efficiency: f64,
    pub granularity_us: f64,
    pub repetitions: usize,
    pub calibration_ns_per_iter: f64,
    pub experiment: String,
    pub tool_version: String,
    pub calibration_fingerprint: String,
    pub steal: bool,
    pub priority_mode: String,
    pub idle_detection: bool,
    pub worker_stack: String,
    pub transport: String,
    pub kernel: String,
    pub precision: String,
    pub flops_per_iteration: u64,
    pub peak_flops: f64,
    pub peak_source: String,
    pub warmup_runs: usize,
    pub tasks: usize,
    pub dataflow_checksum: String,
    pub calibration_anomaly: bool,
}

/// Everything about a row except the measured point.
#[derive(Debug, Clone)]
pub struct RowContext<'a> {
    pub experiment: &'a str,
    pub spec: &'a GraphSpec,
    pub config: &'a BackendConfig,
    pub calibration: Option<&'a Calibration>,
    pub peak_source: &'a str,
    pub warmup_runs: usize,
}

impl RowContext<'_> {
    pub fn row(&self, point: &CurvePoint<f64>, peak_flops: f64) -> CurveRow {
        let s = &self.config.scheduler;
        CurveRow {
            backend: self.config.kind.to_string(),
            pattern: self.spec.pattern.to_string(),
            cores: self.config.cores,
            shards_per_core: self.config.shards_per_core,
            width: self.spec.width,
            steps: self.spec.timesteps,
            grain_iterations: point.grain_iterations,
            output_bytes: self.spec.output_bytes,
            wall_seconds_mean: point.wall_seconds_mean,
            wall_seconds_ci99: point.wall_seconds_ci99,
            flops: point.flops,
            flops_per_second: point.flops_per_second,
            efficiency: point.efficiency,
            granularity_us: point.granularity_us,
            repetitions: point.repetitions,
            calibration_ns_per_iter: self.calibration.map_or(f64::NAN, |c| c.ns_per_iteration),
            experiment: self.experiment.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            calibration_fingerprint: self
                .calibration
                .map_or_else(|| "none".to_string(), Calibration::fingerprint),
            steal: s.work_stealing,
            priority_mode: s.priority_mode.to_string(),
            idle_detection: s.idle_detection,
            worker_stack: s.worker_stack.to_string(),
            transport: self.config.transport.medium.to_string(),
            kernel: self.spec.kernel.kind.to_string(),
            precision: self.spec.kernel.precision.to_string(),
            flops_per_iteration: self.spec.kernel.flops_per_iteration(),
            peak_flops,
            peak_source: self.peak_source.to_string(),
            warmup_runs: self.warmup_runs,
            tasks: point.tasks,
            dataflow_checksum: format!("{:016x}", point.dataflow_checksum),
            calibration_anomaly: point.calibration_anomaly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetgRow {
    pub experiment: String,
    pub backend: String,
    pub pattern: String,
    pub cores: usize,
    pub shards_per_core: usize,
    pub width: usize,
    pub steps: usize,
    pub output_bytes: usize,
    pub steal: bool,
    pub priority_mode: String,
    pub idle_detection: bool,
    pub worker_stack: String,
    pub transport: String,
    pub kernel: String,
    pub precision: String,
    pub points: usize,
    pub threshold: f64,
    /// NaN when unreachable; an upper bound when saturated.
    pub metg_us: f64,
    /// `value`, `saturated` or `unreachable`.
    pub state: String,
    pub non_monotone: bool,
    pub peak_flops: f64,
    pub repetitions: usize,
    pub calibration_fingerprint: String,
    pub tool_version: String,
}

/// Identity of the curve a row belongs to.
fn curve_key(r: &CurveRow) -> String {
    [
        r.experiment.as_str(),
        &r.backend,
        &r.pattern,
        &r.cores.to_string(),
        &r.shards_per_core.to_string(),
        &r.width.to_string(),
        &r.steps.to_string(),
        &r.output_bytes.to_string(),
        &r.steal.to_string(),
        &r.priority_mode,
        &r.idle_detection.to_string(),
        &r.worker_stack,
        &r.transport,
        &r.kernel,
        &r.precision,
    ]
    .join("\u{1f}")
}

/// Groups rows into curves, in order of first appearance.
pub fn group_curves(rows: &[CurveRow]) -> Vec<Vec<&CurveRow>> {
    let mut keys: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<&CurveRow>> = Vec::new();
    for r in rows {
        let key = curve_key(r);
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    for g in &mut groups {
        g.sort_by_key(|r| r.grain_iterations);
    }
    groups
}

fn curve_from_rows(rows: &[&CurveRow]) -> Result<MetgCurve<f64>, CliError> {
    let first = rows[0];
    let pattern: PatternKind = first
        .pattern
        .parse()
        .map_err(|e| CliError::usage(format!("curves file: {e}")))?;
    let mut curve = MetgCurve::new(
        first.backend.clone(),
        pattern,
        first.cores,
        first.shards_per_core,
    );
    curve.peak_flops = first.peak_flops;
    curve.points = rows
        .iter()
        .map(|r| CurvePoint {
            grain_iterations: r.grain_iterations,
            granularity_us: r.granularity_us,
            efficiency: r.efficiency,
            wall_seconds_mean: r.wall_seconds_mean,
            wall_seconds_ci99: r.wall_seconds_ci99,
            repetitions: r.repetitions,
            flops: r.flops,
            flops_per_second: r.flops_per_second,
            tasks: r.tasks,
            dataflow_checksum: u64::from_str_radix(&r.dataflow_checksum, 16).unwrap_or(0),
            calibration_anomaly: r.calibration_anomaly,
        })
        .collect();
    Ok(curve)
}

/// One METG row per curve. Depends only on the rows, so recomputing from a
/// persisted curves file reproduces the table exactly.
pub fn metg_table(rows: &[CurveRow], threshold: f64) -> Result<Vec<MetgRow>, CliError> {
    let mut out = Vec::new();
    for group in group_curves(rows) {
        let curve = curve_from_rows(&group)?;
        let first = group[0];
        let (metg_us, state, non_monotone) = if curve.points.len() < 2 {
            (f64::NAN, "too_few_points", false)
        } else {
            let result = compute_metg(&curve, threshold)?;
            match result.state {
                MetgState::Value {
                    metg_us,
                    non_monotone,
                    ..
                } => (metg_us, "value", non_monotone),
                MetgState::Saturated { metg_us } => (metg_us, "saturated", false),
                MetgState::Unreachable => (f64::NAN, "unreachable", false),
            }
        };
        out.push(MetgRow {
            experiment: first.experiment.clone(),
            backend: first.backend.clone(),
            pattern: first.pattern.clone(),
            cores: first.cores,
            shards_per_core: first.shards_per_core,
            width: first.width,
            steps: first.steps,
            output_bytes: first.output_bytes,
            steal: first.steal,
            priority_mode: first.priority_mode.clone(),
            idle_detection: first.idle_detection,
            worker_stack: first.worker_stack.clone(),
            transport: first.transport.clone(),
            kernel: first.kernel.clone(),
            precision: first.precision.clone(),
            points: group.len(),
            threshold,
            metg_us,
            state: state.to_string(),
            non_monotone,
            peak_flops: first.peak_flops,
            repetitions: first.repetitions,
            calibration_fingerprint: first.calibration_fingerprint.clone(),
            tool_version: first.tool_version.clone(),
        });
    }
    Ok(out)
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Writes `rows` to `path` via a temporary file, replacing it atomically.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Appends rows, writing the header only when the file is new or empty.
pub struct Appender {
    writer: csv::Writer<File>,
}

impl Appender {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let writer = csv::WriterBuilder::new()
            .has_headers(fresh)
            .from_writer(file);
        Ok(Appender { writer })
    }

    pub fn append<T: Serialize>(&mut self, row: &T) -> Result<(), CliError> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Renders rows as CSV text (header included) for printing.
pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| CliError::runtime(e.error()))?;
    String::from_utf8(bytes).map_err(CliError::runtime)
}

/// Writes a plain-text file in one go.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
