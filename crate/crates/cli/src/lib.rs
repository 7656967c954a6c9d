//! `tgbench` command-line driver: calibrate the kernel, run single
//! configurations, sweep grain sizes, derive METG tables, compare scheduler
//! variants and plot the results.

pub mod commands;
pub mod error;
pub mod plan;
pub mod plot;
pub mod records;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use tgbench::{
    BackendKind, KernelKind, Medium, PatternKind, Precision, PriorityMode, SchedulerConfig,
    WorkerStack,
};

use crate::commands::{
    CalibrateOptions, RunOptions, SweepOptions, VariantsOptions, Workload, DEFAULT_CALIBRATION,
};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "tgbench",
    version,
    about = "Task-graph runtime overhead benchmark"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure the kernel's cost per iteration and write a calibration file.
    Calibrate(CalibrateArgs),
    /// Time one configuration and append a CSV row.
    Run(RunArgs),
    /// Run a TOML experiment plan, writing curves.csv and metg.csv.
    Sweep(SweepArgs),
    /// Recompute the METG table from a curves file.
    Metg(MetgArgs),
    /// Compare scheduler and transport variants at a fixed grain.
    Variants(VariantsArgs),
    /// Render SVG charts from a curves or metg file.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value = DEFAULT_CALIBRATION)]
    pub output: PathBuf,
    /// Minimum duration of each timed sample.
    #[arg(long, default_value_t = 200)]
    pub target_ms: u64,
    #[arg(long, default_value = "compute_bound")]
    pub kernel: KernelKind,
    #[arg(long, default_value = "f64")]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct WorkloadArgs {
    #[arg(long, default_value = "stencil_1d")]
    pub pattern: PatternKind,
    /// Graph width; defaults to cores × shards-per-core.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Kernel iterations per task.
    #[arg(long, default_value_t = 4096)]
    pub grain: u64,
    /// Worker or rank count; defaults to the available parallelism.
    #[arg(long, env = "TGBENCH_CORES")]
    pub cores: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub shards_per_core: usize,
    #[arg(long, default_value_t = 0)]
    pub output_bytes: usize,
    #[arg(long, default_value = "compute_bound")]
    pub kernel: KernelKind,
    #[arg(long, default_value = "f64")]
    pub precision: Precision,
    /// Untimed runs before the timed ones.
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Calibration file; `tgbench-calibration.toml` is used when present.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Per-core peak FLOP/s overriding the calibration.
    #[arg(long)]
    pub peak_flops_per_core: Option<f64>,
    /// Minimum watchdog limit in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub watchdog_floor_secs: f64,
    #[arg(long, default_value = "default")]
    pub worker_stack: WorkerStack,
}

impl WorkloadArgs {
    fn resolve(&self, repetitions: usize) -> Result<Workload, CliError> {
        if !(self.watchdog_floor_secs >= 0.0) {
            return Err(CliError::usage(
                "--watchdog-floor-secs must be non-negative",
            ));
        }
        Ok(Workload {
            pattern: self.pattern,
            width: self.width,
            steps: self.steps,
            grain: self.grain,
            cores: commands::resolve_cores(self.cores)?,
            shards_per_core: self.shards_per_core,
            output_bytes: self.output_bytes,
            kernel: self.kernel,
            precision: self.precision,
            repetitions,
            warmup: self.warmup,
            calibration: commands::load_calibration(self.calibration.as_deref())?,
            peak_flops_per_core: self.peak_flops_per_core,
            watchdog_floor: Duration::from_secs_f64(self.watchdog_floor_secs),
        })
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "async_ws")]
    pub backend: BackendKind,
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value = "shared_queue")]
    pub transport: Medium,
    /// Let idle workers steal (default).
    #[arg(long, overrides_with = "no_steal")]
    pub steal: bool,
    #[arg(long, overrides_with = "steal")]
    pub no_steal: bool,
    #[arg(long, default_value = "none")]
    pub priority_mode: PriorityMode,
    #[arg(long, overrides_with = "no_idle_detection")]
    pub idle_detection: bool,
    /// Disable idle detection (default).
    #[arg(long, overrides_with = "idle_detection")]
    pub no_idle_detection: bool,
    /// CSV file the row is appended to.
    #[arg(long, default_value = "runs.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// TOML experiment plan.
    pub plan: PathBuf,
    /// Default core count for experiments that do not set one.
    #[arg(long, env = "TGBENCH_CORES")]
    pub cores: Option<usize>,
    /// Overrides the plan's output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Sample duration for inline calibration.
    #[arg(long, default_value_t = 200)]
    pub calibration_target_ms: u64,
    /// Do not print rows as they are measured.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct MetgArgs {
    pub curves: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VariantsArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// curves.csv or metg.csv.
    pub input: PathBuf,
    #[arg(long, default_value = "plots")]
    pub out_dir: PathBuf,
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match command {
        Command::Calibrate(a) => {
            let cal = commands::cmd_calibrate(&CalibrateOptions {
                output: a.output.clone(),
                target: Duration::from_millis(a.target_ms),
                kernel: a.kernel,
                precision: a.precision,
            })?;
            writeln!(
                stdout,
                "ns_per_iteration = {:.4} (dispersion {:.3}, {} samples of {} iterations)\n\
                 peak per core = {:.3e} FLOP/s\nwrote {}",
                cal.ns_per_iteration,
                cal.dispersion,
                cal.samples,
                cal.iterations_per_sample,
                tgbench::peak_flops(&cal, 1),
                a.output.display()
            )?;
        }
        Command::Run(a) => {
            let row = commands::cmd_run(&RunOptions {
                workload: a.workload.resolve(a.repetitions)?,
                backend: a.backend,
                scheduler: SchedulerConfig {
                    work_stealing: !a.no_steal,
                    priority_mode: a.priority_mode,
                    idle_detection: a.idle_detection,
                    worker_stack: a.workload.worker_stack,
                },
                medium: a.transport,
                out: Some(a.out),
            })?;
            write!(stdout, "{}", commands::run_row_text(&row)?)?;
        }
        Command::Sweep(a) => {
            let quiet = a.quiet;
            let out = commands::cmd_sweep(
                &SweepOptions {
                    plan: a.plan,
                    cores: commands::resolve_cores(a.cores)?,
                    output_dir: a.output_dir,
                    calibration_target: Duration::from_millis(a.calibration_target_ms),
                },
                |r| {
                    if !quiet {
                        eprintln!(
                            "{} {} spc={} grain={} granularity={:.3}us eff={:.3}",
                            r.experiment,
                            r.backend,
                            r.shards_per_core,
                            r.grain_iterations,
                            r.granularity_us,
                            r.efficiency
                        );
                    }
                },
            )?;
            write!(stdout, "{}", records::to_csv_string(&out.metg)?)?;
            writeln!(
                stdout,
                "wrote {} and {}",
                out.curves_csv.display(),
                out.metg_csv.display()
            )?;
        }
        Command::Metg(a) => {
            let table = commands::cmd_metg(&a.curves, a.threshold, a.out.as_deref())?;
            if a.out.is_none() {
                write!(stdout, "{}", records::to_csv_string(&table)?)?;
            }
        }
        Command::Variants(a) => {
            let rows = commands::cmd_variants(&VariantsOptions {
                workload: a.workload.resolve(a.repetitions)?,
                worker_stack: a.workload.worker_stack,
                out: a.out,
            })?;
            write!(stdout, "{}", commands::format_variants(&rows))?;
        }
        Command::Plot(a) => {
            for path in commands::cmd_plot(&a.input, &a.out_dir)? {
                writeln!(stdout, "wrote {}", path.display())?;
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("tgbench: {e}");
            e.exit_code()
        }
    }
}
