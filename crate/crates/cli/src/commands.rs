//! Subcommand implementations. Each returns its results so callers other
//! than the binary (tests, scripts) can inspect them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tgbench::{
    build_graph, calibrate, confidence_interval, peak_flops, run, sweep, BackendConfig,
    BackendKind, Calibration, CurvePoint, GraphSpec, KernelConfig, KernelKind, LiveRunner, Medium,
    MetgCurve, PatternKind, PeakPolicy, Precision, PriorityMode, RunResult, SchedulerConfig,
    WorkerStack,
};

use crate::error::CliError;
use crate::plan::ExperimentPlan;
use crate::plot::{self, Chart, Series};
use crate::records::{
    metg_table, read_rows, to_csv_string, write_rows, write_text, Appender, CurveRow, MetgRow,
    RowContext, SWEEP_WARMUP_RUNS, TOOL_VERSION,
};

pub const DEFAULT_CALIBRATION: &str = "tgbench-calibration.toml";

/// `flag`, else the machine's available parallelism.
pub fn resolve_cores(flag: Option<usize>) -> Result<usize, CliError> {
    match flag {
        Some(0) => Err(CliError::usage("--cores must be at least 1")),
        Some(c) => Ok(c),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Loads an explicit calibration file (which must exist) or the default
/// one if present.
pub fn load_calibration(path: Option<&Path>) -> Result<Option<Calibration>, CliError> {
    match path {
        Some(p) => Calibration::load(p).map(Some).map_err(CliError::usage),
        None => {
            let p = Path::new(DEFAULT_CALIBRATION);
            if p.exists() {
                Calibration::load(p).map(Some).map_err(CliError::usage)
            } else {
                Ok(None)
            }
        }
    }
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Clone)]
pub struct CalibrateOptions {
    pub output: PathBuf,
    pub target: Duration,
    pub kernel: KernelKind,
    pub precision: Precision,
}

pub fn cmd_calibrate(opts: &CalibrateOptions) -> Result<Calibration, CliError> {
    let cal = calibrate(opts.kernel, opts.precision, opts.target)?;
    cal.save(&opts.output).map_err(CliError::runtime)?;
    Ok(cal)
}

// ---------------------------------------------------------------- run

/// Graph and measurement settings shared by `run` and `variants`.
#[derive(Debug, Clone)]
pub struct Workload {
    pub pattern: PatternKind,
    pub width: Option<usize>,
    pub steps: usize,
    pub grain: u64,
    pub cores: usize,
    pub shards_per_core: usize,
    pub output_bytes: usize,
    pub kernel: KernelKind,
    pub precision: Precision,
    pub repetitions: usize,
    pub warmup: usize,
    pub calibration: Option<Calibration>,
    /// Per-core FLOP/s overriding the calibration-derived peak.
    pub peak_flops_per_core: Option<f64>,
    pub watchdog_floor: Duration,
}

impl Workload {
    fn spec(&self, config: &BackendConfig) -> Result<GraphSpec, CliError> {
        let kernel = match self.kernel {
            KernelKind::ComputeBound => KernelConfig::compute_bound(self.grain),
            KernelKind::Empty => KernelConfig::empty().with_iterations(self.grain),
        }
        .with_precision(self.precision);
        let spec = GraphSpec::new(
            self.width.unwrap_or(config.default_width()),
            self.steps,
            self.pattern,
        )
        .with_kernel(kernel)
        .with_output_bytes(self.output_bytes);
        spec.validate()?;
        Ok(spec)
    }

    fn config(
        &self,
        kind: BackendKind,
        scheduler: SchedulerConfig,
        medium: Medium,
    ) -> Result<BackendConfig, CliError> {
        let mut config = BackendConfig::new(kind, self.cores)
            .with_shards_per_core(self.shards_per_core)
            .with_scheduler(scheduler)
            .with_medium(medium);
        config.watchdog.floor = self.watchdog_floor;
        config.watchdog.ns_per_iteration = self.calibration.as_ref().map(|c| c.ns_per_iteration);
        config.validate()?;
        Ok(config)
    }

    /// Peak FLOP/s for `cores` and where it came from.
    fn peak(&self) -> (f64, &'static str) {
        match (self.peak_flops_per_core, &self.calibration) {
            (Some(p), _) => (p * self.cores as f64, "override"),
            (None, Some(c)) => (peak_flops(c, self.cores), "calibration"),
            (None, None) => (f64::NAN, "none"),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.repetitions == 0 {
            return Err(CliError::usage("--repetitions must be at least 1"));
        }
        if matches!(self.peak_flops_per_core, Some(p) if !(p > 0.0)) {
            return Err(CliError::usage("--peak-flops-per-core must be positive"));
        }
        Ok(())
    }
}

/// Repeated timed runs of one graph, with identical checksums enforced.
struct Samples {
    runs: Vec<RunResult>,
}

impl Samples {
    fn measure(
        graph: &tgbench::TaskGraph,
        config: &BackendConfig,
        warmup: usize,
        reps: usize,
    ) -> Result<Self, CliError> {
        for _ in 0..warmup {
            run(graph, config)?;
        }
        let mut runs = Vec::with_capacity(reps);
        for _ in 0..reps {
            runs.push(run(graph, config)?);
        }
        let s = Samples { runs };
        s.check_checksums()?;
        Ok(s)
    }

    fn check_checksums(&self) -> Result<(), CliError> {
        let first = self.runs[0].dataflow_checksum;
        if self.runs.iter().any(|r| r.dataflow_checksum != first) {
            return Err(CliError::runtime(
                "dataflow checksum changed between repetitions",
            ));
        }
        Ok(())
    }

    fn walls(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.wall_seconds).collect()
    }
}

/// Mean and 99% half-width; NaN half-width for a single sample.
fn mean_ci99(samples: &[f64]) -> (f64, f64) {
    match confidence_interval(samples, 0.99) {
        Ok(ci) => (ci.mean, ci.half_width),
        Err(_) => (samples.iter().sum::<f64>() / samples.len() as f64, f64::NAN),
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workload: Workload,
    pub backend: BackendKind,
    pub scheduler: SchedulerConfig,
    pub medium: Medium,
    /// CSV file the row is appended to.
    pub out: Option<PathBuf>,
}

pub fn cmd_run(opts: &RunOptions) -> Result<CurveRow, CliError> {
    let w = &opts.workload;
    w.validate()?;
    let config = w.config(opts.backend, opts.scheduler, opts.medium)?;
    let spec = w.spec(&config)?;
    let graph = build_graph(spec.clone())?;
    let samples = Samples::measure(&graph, &config, w.warmup, w.repetitions)?;
    let (mean, ci) = mean_ci99(&samples.walls());
    let last = samples.runs.last().expect("at least one repetition");
    let flops_per_second = last.flops_executed as f64 / mean;
    let (peak, source) = w.peak();
    let raw = flops_per_second / peak;
    let point = CurvePoint {
        grain_iterations: w.grain,
        granularity_us: mean * config.cores as f64 / last.tasks_executed as f64 * 1e6,
        efficiency: raw.clamp(0.0, 1.0),
        wall_seconds_mean: mean,
        wall_seconds_ci99: ci,
        repetitions: w.repetitions,
        flops: last.flops_executed,
        flops_per_second,
        tasks: last.tasks_executed,
        dataflow_checksum: last.dataflow_checksum,
        calibration_anomaly: raw > 1.0,
    };
    let ctx = RowContext {
        experiment: "run",
        spec: &spec,
        config: &config,
        calibration: w.calibration.as_ref(),
        peak_source: source,
        warmup_runs: w.warmup,
    };
    let row = ctx.row(&point, peak);
    if let Some(out) = &opts.out {
        Appender::open(out)?.append(&row)?;
    }
    Ok(row)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub plan: PathBuf,
    pub cores: usize,
    /// Replaces the plan's output directory.
    pub output_dir: Option<PathBuf>,
    pub calibration_target: Duration,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub curves_csv: PathBuf,
    pub metg_csv: PathBuf,
    pub curves: Vec<CurveRow>,
    pub metg: Vec<MetgRow>,
}

struct Measured {
    experiment: String,
    spec: GraphSpec,
    config: BackendConfig,
    curve: MetgCurve<f64>,
}

fn plan_calibration(
    plan: &ExperimentPlan,
    out_dir: &Path,
    target: Duration,
) -> Result<Option<Calibration>, CliError> {
    if plan.calibrate_inline {
        let cal = calibrate(KernelKind::ComputeBound, Precision::F64, target)?;
        let path = plan
            .calibration
            .clone()
            .unwrap_or_else(|| out_dir.join("calibration.toml"));
        cal.save(&path).map_err(CliError::runtime)?;
        return Ok(Some(cal));
    }
    match &plan.calibration {
        Some(p) => Calibration::load(p).map(Some).map_err(CliError::usage),
        None => Ok(None),
    }
}

/// Measures every curve of a plan.
///
/// Provisional rows stream to `curves.csv` as points are measured. When the
/// sweep ends (or fails), all curves are normalized against one per-core peak
/// and `curves.csv` is rewritten; `metg.csv` is then computed from the file
/// as written, exactly as `cmd_metg` would.
pub fn cmd_sweep(
    opts: &SweepOptions,
    mut progress: impl FnMut(&CurveRow),
) -> Result<SweepOutput, CliError> {
    let mut plan = ExperimentPlan::load(&opts.plan)?;
    if let Some(dir) = &opts.output_dir {
        plan.output_dir = dir.clone();
    }
    plan.validate()?;
    fs::create_dir_all(&plan.output_dir)?;
    let calibration = plan_calibration(&plan, &plan.output_dir, opts.calibration_target)?;
    let planned = plan.curves(opts.cores, calibration.as_ref().map(|c| c.ns_per_iteration))?;

    let curves_csv = plan.output_dir.join("curves.csv");
    let metg_csv = plan.output_dir.join("metg.csv");
    if curves_csv.exists() {
        fs::remove_file(&curves_csv)?;
    }
    let mut stream = Appender::open(&curves_csv)?;
    let per_core_override = plan.peak_flops_per_core;

    let mut measured: Vec<Measured> = Vec::new();
    let mut failure: Option<CliError> = None;
    for pc in &planned {
        let cores = pc.config.cores;
        let policy = PeakPolicy {
            override_flops: per_core_override.map(|p| p * cores as f64),
            calibration_flops: calibration.as_ref().map(|c| peak_flops(c, cores)),
        };
        let ctx = RowContext {
            experiment: &pc.experiment,
            spec: &pc.spec,
            config: &pc.config,
            calibration: calibration.as_ref(),
            peak_source: "provisional",
            warmup_runs: SWEEP_WARMUP_RUNS,
        };
        let mut best = 0.0f64;
        let mut stream_error: Option<CliError> = None;
        let result = sweep::<f64, _>(
            &pc.spec,
            &pc.config,
            &pc.grains,
            pc.repetitions,
            &policy,
            &mut LiveRunner,
            |p| {
                best = best.max(p.flops_per_second);
                let peak = policy.resolve(best).map_or(f64::NAN, |(p, _)| p);
                let row = ctx.row(p, peak);
                progress(&row);
                if let Err(e) = stream.append(&row) {
                    stream_error.get_or_insert(e);
                }
            },
        );
        if let Some(e) = stream_error {
            return Err(e);
        }
        let curve = match result {
            Ok(c) => c,
            Err(e) => {
                failure = Some(e.source.into());
                e.partial
            }
        };
        measured.push(Measured {
            experiment: pc.experiment.clone(),
            spec: pc.spec.clone(),
            config: pc.config.clone(),
            curve,
        });
        if failure.is_some() {
            break;
        }
    }
    drop(stream);

    // one per-core peak for the whole plan
    let best_per_core = measured
        .iter()
        .map(|m| m.curve.best_flops_per_second() / m.config.cores as f64)
        .fold(0.0, f64::max);
    let (per_core, source) = match (per_core_override, &calibration) {
        (Some(p), _) => (p, "override"),
        _ if best_per_core > 0.0 => (best_per_core, "best_measured"),
        (None, Some(c)) => (peak_flops(c, 1), "calibration"),
        (None, None) => (f64::NAN, "none"),
    };
    let mut rows = Vec::new();
    for m in &mut measured {
        let peak = per_core * m.config.cores as f64;
        if peak > 0.0 {
            m.curve.renormalize(peak)?;
        }
        let ctx = RowContext {
            experiment: &m.experiment,
            spec: &m.spec,
            config: &m.config,
            calibration: calibration.as_ref(),
            peak_source: source,
            warmup_runs: SWEEP_WARMUP_RUNS,
        };
        rows.extend(m.curve.points.iter().map(|p| ctx.row(p, peak)));
    }
    write_rows(&curves_csv, &rows)?;
    let curves: Vec<CurveRow> = read_rows(&curves_csv)?;
    let metg = metg_table(&curves, plan.threshold)?;
    write_rows(&metg_csv, &metg)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(SweepOutput {
        curves_csv,
        metg_csv,
        curves,
        metg,
    })
}

// ---------------------------------------------------------------- metg

pub fn cmd_metg(
    curves_csv: &Path,
    threshold: f64,
    out: Option<&Path>,
) -> Result<Vec<MetgRow>, CliError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CliError::usage(format!(
            "threshold {threshold} outside (0, 1]"
        )));
    }
    let rows: Vec<CurveRow> = read_rows(curves_csv)?;
    let table = metg_table(&rows, threshold)?;
    if let Some(out) = out {
        write_rows(out, &table)?;
    }
    Ok(table)
}

// ---------------------------------------------------------------- variants

/// One scheduler/transport configuration compared by `cmd_variants`.
#[derive(Debug, Clone, Copy)]
pub struct Variant {
    pub name: &'static str,
    pub backend: BackendKind,
    pub priority_mode: PriorityMode,
    pub idle_detection: bool,
    pub medium: Medium,
}

/// The compared variants; the first is the baseline for relative change.
/// The last row is a reference point for the socket transport.
pub const VARIANTS: [Variant; 6] = [
    Variant {
        name: "default",
        backend: BackendKind::AsyncWs,
        priority_mode: PriorityMode::Bitvector,
        idle_detection: true,
        medium: Medium::SharedQueue,
    },
    Variant {
        name: "fixed64-priority",
        backend: BackendKind::AsyncWs,
        priority_mode: PriorityMode::Fixed64,
        idle_detection: true,
        medium: Medium::SharedQueue,
    },
    Variant {
        name: "no-idle-detection",
        backend: BackendKind::AsyncWs,
        priority_mode: PriorityMode::None,
        idle_detection: false,
        medium: Medium::SharedQueue,
    },
    Variant {
        name: "shared-queue-transport",
        backend: BackendKind::MessagePassing,
        priority_mode: PriorityMode::Bitvector,
        idle_detection: true,
        medium: Medium::SharedQueue,
    },
    Variant {
        name: "combined",
        backend: BackendKind::MessagePassing,
        priority_mode: PriorityMode::None,
        idle_detection: false,
        medium: Medium::SharedQueue,
    },
    Variant {
        name: "local-socket-reference",
        backend: BackendKind::MessagePassing,
        priority_mode: PriorityMode::Bitvector,
        idle_detection: true,
        medium: Medium::LocalSocket,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub backend: String,
    pub pattern: String,
    pub cores: usize,
    pub shards_per_core: usize,
    pub width: usize,
    pub steps: usize,
    pub grain_iterations: u64,
    pub output_bytes: usize,
    pub steal: bool,
    pub priority_mode: String,
    pub idle_detection: bool,
    pub worker_stack: String,
    pub transport: String,
    pub repetitions: usize,
    pub tasks_per_second_mean: f64,
    pub tasks_per_second_ci99: f64,
    pub flops_per_second_mean: f64,
    /// (variant / default − 1) × 100.
    pub relative_change_pct: f64,
    /// First-order propagated 99% half-width of `relative_change_pct`.
    pub relative_ci99_pct: f64,
    pub dataflow_checksum: String,
    pub calibration_fingerprint: String,
    pub tool_version: String,
}

#[derive(Debug, Clone)]
pub struct VariantsOptions {
    pub workload: Workload,
    pub worker_stack: WorkerStack,
    pub out: Option<PathBuf>,
}

/// Runs every variant on one fixed graph and grain.
///
/// Repetitions are interleaved (one run of each variant per round) so slow
/// drifts in machine state spread evenly across variants. Fails if any two
/// runs disagree on the dataflow checksum.
pub fn cmd_variants(opts: &VariantsOptions) -> Result<Vec<VariantRow>, CliError> {
    let w = &opts.workload;
    w.validate()?;
    let mut setups = Vec::new();
    for v in VARIANTS {
        let sched = SchedulerConfig {
            work_stealing: true,
            priority_mode: v.priority_mode,
            idle_detection: v.idle_detection,
            worker_stack: opts.worker_stack,
        };
        let config = w.config(v.backend, sched, v.medium)?;
        let spec = w.spec(&config)?;
        let graph = build_graph(spec)?;
        setups.push((v, config, graph));
    }
    for _ in 0..w.warmup {
        for (_, config, graph) in &setups {
            run(graph, config)?;
        }
    }
    let mut samples: Vec<Vec<RunResult>> = vec![Vec::new(); setups.len()];
    for _ in 0..w.repetitions {
        for (k, (_, config, graph)) in setups.iter().enumerate() {
            samples[k].push(run(graph, config)?);
        }
    }
    let checksum = samples[0][0].dataflow_checksum;
    if samples
        .iter()
        .flatten()
        .any(|r| r.dataflow_checksum != checksum)
    {
        return Err(CliError::runtime(
            "variants disagree on the dataflow checksum",
        ));
    }

    let stats: Vec<(f64, f64, f64)> = samples
        .iter()
        .map(|runs| {
            let tps: Vec<f64> = runs
                .iter()
                .map(|r| r.tasks_executed as f64 / r.wall_seconds)
                .collect();
            let fps = runs
                .iter()
                .map(|r| r.flops_executed as f64 / r.wall_seconds)
                .sum::<f64>()
                / runs.len() as f64;
            let (m, ci) = mean_ci99(&tps);
            (m, ci, fps)
        })
        .collect();
    let (base_mean, base_ci, _) = stats[0];
    let fingerprint = w
        .calibration
        .as_ref()
        .map_or_else(|| "none".to_string(), Calibration::fingerprint);

    let rows: Vec<VariantRow> = setups
        .iter()
        .zip(&stats)
        .map(|((v, config, graph), &(mean, ci, fps))| {
            let ratio = mean / base_mean;
            let rel_ci =
                ratio * ((ci / mean).powi(2) + (base_ci / base_mean).powi(2)).sqrt() * 100.0;
            VariantRow {
                variant: v.name.to_string(),
                backend: v.backend.to_string(),
                pattern: graph.pattern().to_string(),
                cores: config.cores,
                shards_per_core: config.shards_per_core,
                width: graph.width(),
                steps: graph.timesteps(),
                grain_iterations: graph.kernel().iterations,
                output_bytes: graph.output_bytes(),
                steal: config.scheduler.work_stealing,
                priority_mode: config.scheduler.priority_mode.to_string(),
                idle_detection: config.scheduler.idle_detection,
                worker_stack: config.scheduler.worker_stack.to_string(),
                transport: config.transport.medium.to_string(),
                repetitions: w.repetitions,
                tasks_per_second_mean: mean,
                tasks_per_second_ci99: ci,
                flops_per_second_mean: fps,
                relative_change_pct: (ratio - 1.0) * 100.0,
                relative_ci99_pct: rel_ci,
                dataflow_checksum: format!("{checksum:016x}"),
                calibration_fingerprint: fingerprint.clone(),
                tool_version: TOOL_VERSION.to_string(),
            }
        })
        .collect();
    if let Some(out) = &opts.out {
        write_rows(out, &rows)?;
    }
    Ok(rows)
}

/// Fixed-width text table of variant results.
pub fn format_variants(rows: &[VariantRow]) -> String {
    let mut s = format!(
        "{:<24} {:<16} {:>14} {:>12} {:>10} {:>10}  {}\n",
        "variant", "backend", "tasks/s", "±ci99", "rel %", "±ci99 %", "checksum"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<24} {:<16} {:>14.1} {:>12.1} {:>+10.2} {:>10.2}  {}\n",
            r.variant,
            r.backend,
            r.tasks_per_second_mean,
            r.tasks_per_second_ci99,
            r.relative_change_pct,
            r.relative_ci99_pct,
            r.dataflow_checksum
        ));
    }
    s
}

// ---------------------------------------------------------------- plot

fn series_label(backend: &str, extra: &str, distinct: bool) -> String {
    if distinct {
        backend.to_string()
    } else {
        format!("{backend} ({extra})")
    }
}

/// Renders SVG charts for a curves or METG file; returns the written paths.
pub fn cmd_plot(input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let header = {
        let mut r = csv::Reader::from_path(input)
            .map_err(|e| CliError::usage(format!("{}: {e}", input.display())))?;
        r.headers()?.clone()
    };
    fs::create_dir_all(out_dir)?;
    if header.iter().any(|h| h == "metg_us") {
        plot_metg(&read_rows(input)?, out_dir)
    } else if header.iter().any(|h| h == "granularity_us") {
        plot_curves(&read_rows(input)?, out_dir)
    } else {
        Err(CliError::usage(format!(
            "{}: neither a curves nor a metg file",
            input.display()
        )))
    }
}

fn plot_curves(rows: &[CurveRow], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut charts: Vec<((String, usize, usize), Vec<CurveRow>)> = Vec::new();
    for r in rows {
        let key = (r.pattern.clone(), r.cores, r.shards_per_core);
        match charts.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.clone()),
            None => charts.push((key, vec![r.clone()])),
        }
    }
    let mut written = Vec::new();
    for ((pattern, cores, spc), members) in charts {
        let groups = crate::records::group_curves(&members);
        let distinct = {
            let mut names: Vec<&str> = groups.iter().map(|g| g[0].backend.as_str()).collect();
            names.sort_unstable();
            names.windows(2).all(|w| w[0] != w[1])
        };
        let label = |g: &[&CurveRow]| {
            series_label(
                &g[0].backend,
                &format!("{}, {}", g[0].experiment, g[0].transport),
                distinct,
            )
        };
        let eff = Chart {
            title: format!(
                "Efficiency vs task granularity — {pattern}, {cores} cores, {spc} tasks/core"
            ),
            x_label: "task granularity (µs)".into(),
            y_label: "efficiency".into(),
            series: groups
                .iter()
                .map(|g| Series {
                    label: label(g),
                    points: g.iter().map(|r| (r.granularity_us, r.efficiency)).collect(),
                })
                .collect(),
            reference: Some((0.5, "50% efficiency".into())),
        };
        let flops = Chart {
            title: format!("FLOP/s vs grain size — {pattern}, {cores} cores, {spc} tasks/core"),
            x_label: "grain size (iterations)".into(),
            y_label: "FLOP/s".into(),
            series: groups
                .iter()
                .map(|g| Series {
                    label: label(g),
                    points: g
                        .iter()
                        .map(|r| (r.grain_iterations as f64, r.flops_per_second))
                        .collect(),
                })
                .collect(),
            reference: groups
                .first()
                .map(|g| g[0].peak_flops)
                .filter(|p| p.is_finite() && *p > 0.0)
                .map(|p| (p * 0.5, "50% of peak".into())),
        };
        let stem = plot::file_stem(&[&pattern, &format!("c{cores}"), &format!("spc{spc}")]);
        for (name, chart) in [("efficiency", eff), ("flops", flops)] {
            let path = out_dir.join(format!("{name}_{stem}.svg"));
            write_text(&path, &plot::render(&chart))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn plot_metg(rows: &[MetgRow], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut charts: Vec<((String, usize), Vec<&MetgRow>)> = Vec::new();
    for r in rows {
        let key = (r.pattern.clone(), r.cores);
        match charts.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => charts.push((key, vec![r])),
        }
    }
    let mut written = Vec::new();
    for ((pattern, cores), members) in charts {
        let mut series: Vec<Series> = Vec::new();
        for r in members {
            let label = format!("{} ({})", r.backend, r.experiment);
            let idx = match series.iter().position(|s| s.label == label) {
                Some(i) => i,
                None => {
                    series.push(Series {
                        label,
                        points: Vec::new(),
                    });
                    series.len() - 1
                }
            };
            series[idx]
                .points
                .push((r.shards_per_core as f64, r.metg_us));
        }
        for s in &mut series {
            s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let threshold = rows.first().map_or(0.5, |r| r.threshold);
        let chart = Chart {
            title: format!(
                "METG({:.0}%) vs tasks per core — {pattern}, {cores} cores",
                threshold * 100.0
            ),
            x_label: "tasks per core".into(),
            y_label: "METG (µs)".into(),
            series,
            reference: None,
        };
        let path = out_dir.join(format!(
            "metg_{}.svg",
            plot::file_stem(&[&pattern, &format!("c{cores}")])
        ));
        write_text(&path, &plot::render(&chart))?;
        written.push(path);
    }
    Ok(written)
}

/// CSV text for one run row, header included.
pub fn run_row_text(row: &CurveRow) -> Result<String, CliError> {
    to_csv_string(std::slice::from_ref(row))
}
