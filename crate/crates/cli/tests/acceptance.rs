//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Runtime budgets are part of each criterion.

use std::fmt::Write as _;
use std::hint::black_box;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use tgbench::{
    build_graph, calibrate, compute_metg, confidence_interval, execute_kernel, peak_flops, run,
    BackendConfig, BackendKind, CurvePoint, GraphSpec, KernelConfig, KernelKind, Medium,
    MetgCurve, PatternKind, Precision, SchedulerConfig, WorkerStack,
};
use tgbench_cli::commands::{self, SweepOptions, VariantsOptions, Workload, VARIANTS};
use tgbench_cli::records::CurveRow;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn host_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Cores used by the performance criteria; they ask for at least four.
fn bench_cores() -> (usize, Option<String>) {
    let cores = host_cores();
    let note = (cores < 4).then(|| {
        format!("host has {cores} core(s), criterion asks for >= 4; ran with cores = {cores}")
    });
    (cores, note)
}

fn with_note(detail: String, note: Option<String>) -> String {
    match note {
        Some(n) => format!("{detail} [note: {n}]"),
        None => detail,
    }
}

// ----------------------------------------------------------------------------
// 1. dependence oracle

fn oracle(pattern: PatternKind, width: usize, t: usize, i: usize, j: usize) -> bool {
    if t == 0 {
        return false;
    }
    let d = i.abs_diff(j);
    match pattern {
        PatternKind::Trivial => false,
        PatternKind::NoComm => d == 0,
        PatternKind::Stencil1d => d <= 1,
        PatternKind::Stencil1dPeriodic => d <= 1 || d == width - 1,
        PatternKind::Nearest { radius } => d <= radius,
        PatternKind::AllToAll => true,
        PatternKind::Fft => {
            let stages = width.trailing_zeros() as usize;
            d == 0 || (stages > 0 && i ^ (1 << ((t - 1) % stages)) == j)
        }
        PatternKind::Tree => {
            let levels = (usize::BITS - (width - 1).leading_zeros()) as usize;
            d == 0 || (t - 1 < levels && i ^ (1 << (t - 1)) == j)
        }
    }
}

fn dependence_oracle() -> Outcome {
    let mut graphs = 0;
    let mut checked = 0usize;
    for pattern in PatternKind::ALL {
        for width in 1..=16usize {
            if pattern == PatternKind::Fft && !width.is_power_of_two() {
                continue;
            }
            for steps in 1..=8usize {
                let g = build_graph(GraphSpec::new(width, steps, pattern)).map_err(|e| e.to_string())?;
                graphs += 1;
                let mut edges = 0;
                for t in 0..steps {
                    for i in 0..width {
                        let deps: Vec<usize> = g.dependencies(t, i).unwrap().collect();
                        let want: Vec<usize> = (0..width).filter(|&j| oracle(pattern, width, t, i, j)).collect();
                        ensure!(deps == want, "{pattern} w={width} ({t},{i}): {deps:?} != {want:?}");
                        edges += deps.len();
                        let rev: Vec<usize> = g.reverse_dependencies(t, i).unwrap().collect();
                        let transpose: Vec<usize> = if t + 1 < steps {
                            (0..width).filter(|&j| g.dependencies(t + 1, j).unwrap().any(|d| d == i)).collect()
                        } else {
                            vec![]
                        };
                        ensure!(rev == transpose, "{pattern} w={width} ({t},{i}) reverse {rev:?} != {transpose:?}");
                        if t > 0 {
                            let interior = i > 0 && i + 1 < width;
                            let n = deps.len();
                            let ok = match pattern {
                                PatternKind::Trivial => n == 0,
                                PatternKind::NoComm => n == 1,
                                PatternKind::AllToAll => n == width,
                                PatternKind::Stencil1d => n == if width == 1 { 1 } else if interior { 3 } else { 2 },
                                PatternKind::Stencil1dPeriodic => n == width.min(3),
                                PatternKind::Fft => n == if width == 1 { 1 } else { 2 },
                                PatternKind::Tree => n == 1 || n == 2,
                                PatternKind::Nearest { radius } => n <= 2 * radius + 1 && n >= (radius + 1).min(width),
                            };
                            ensure!(ok, "{pattern} w={width} ({t},{i}) cardinality {n}");
                        }
                        checked += 1;
                    }
                }
                ensure!(g.total_edges() == edges, "{pattern} w={width} T={steps} edge total");
                ensure!(g.total_tasks() == width * steps, "{pattern} task total");
            }
        }
    }
    Ok(format!("{graphs} graphs, {checked} tasks checked"))
}

// ----------------------------------------------------------------------------
// 2. backend equivalence

fn backend_equivalence() -> Outcome {
    let configs: Vec<(String, BackendConfig)> = {
        let c = 4;
        let mut v = vec![
            ("serial".to_string(), BackendConfig::new(BackendKind::Serial, 1)),
            ("fork_join".to_string(), BackendConfig::new(BackendKind::ForkJoin, c)),
        ];
        for steal in [true, false] {
            v.push((
                format!("async_ws steal={steal}"),
                BackendConfig::new(BackendKind::AsyncWs, c).with_scheduler(SchedulerConfig {
                    work_stealing: steal,
                    ..SchedulerConfig::default()
                }),
            ));
        }
        for m in [Medium::SharedQueue, Medium::LocalSocket] {
            v.push((format!("message_passing {m}"), BackendConfig::new(BackendKind::MessagePassing, c).with_medium(m)));
        }
        v
    };
    let mut runs = 0;
    for pattern in [PatternKind::Stencil1d, PatternKind::Fft, PatternKind::AllToAll] {
        let g = build_graph(
            GraphSpec::new(8, 100, pattern).with_kernel(KernelConfig::compute_bound(256)).with_output_bytes(16),
        )
        .map_err(|e| e.to_string())?;
        let reference = run(&g, &configs[0].1).map_err(|e| e.to_string())?;
        ensure!(reference.tasks_executed == 800, "serial task count {}", reference.tasks_executed);
        ensure!(reference.edges_satisfied == g.total_edges(), "serial edge count");
        for (name, config) in &configs {
            for rep in 0..20 {
                let r = run(&g, config).map_err(|e| format!("{pattern} {name}: {e}"))?;
                ensure!(
                    (r.tasks_executed, r.edges_satisfied, r.dataflow_checksum)
                        == (reference.tasks_executed, reference.edges_satisfied, reference.dataflow_checksum),
                    "{pattern} {name} rep {rep}: ({}, {}, {:016x}) vs serial ({}, {}, {:016x})",
                    r.tasks_executed,
                    r.edges_satisfied,
                    r.dataflow_checksum,
                    reference.tasks_executed,
                    reference.edges_satisfied,
                    reference.dataflow_checksum
                );
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs over 3 patterns x {} configurations identical", configs.len()))
}

// ----------------------------------------------------------------------------
// 3. METG correctness

fn curve(points: &[(f64, f64)]) -> MetgCurve<f64> {
    let mut c = MetgCurve::new("synthetic", PatternKind::Stencil1d, 1, 1);
    c.points = points
        .iter()
        .enumerate()
        .map(|(k, &(g, e))| CurvePoint {
            grain_iterations: 1 << k,
            granularity_us: g,
            efficiency: e,
            wall_seconds_mean: 1.0,
            wall_seconds_ci99: 0.0,
            repetitions: 5,
            flops: 0,
            flops_per_second: 0.0,
            tasks: 1,
            dataflow_checksum: 0,
            calibration_anomaly: false,
        })
        .collect();
    c
}

fn metg_correctness() -> Outcome {
    // compute c (µs) per task plus o = 10 µs overhead; efficiency c / (c + o)
    let o = 10.0;
    let analytic: Vec<(f64, f64)> = (0..8)
        .map(|k| {
            let c = f64::powi(2.0, k);
            (c + o, c / (c + o))
        })
        .collect();
    let m = compute_metg(&curve(&analytic), 0.5).map_err(|e| e.to_string())?;
    let value = m.metg_us().ok_or("analytic curve: no METG")?;
    let err = (value - 20.0).abs() / 20.0;
    ensure!(err <= 0.05, "analytic METG {value} µs, {:.2}% from 20 µs", err * 100.0);

    let exact = compute_metg(&curve(&[(1.0, 0.2), (7.5, 0.5), (30.0, 0.9)]), 0.5).map_err(|e| e.to_string())?;
    ensure!(exact.metg_us() == Some(7.5), "exact-threshold point gave {:?}", exact.metg_us());

    let saturated = compute_metg(&curve(&[(1.0, 0.6), (2.0, 0.9)]), 0.5).map_err(|e| e.to_string())?;
    ensure!(saturated.is_saturated(), "all-above curve not flagged saturated");
    let unreachable = compute_metg(&curve(&[(1.0, 0.1), (2.0, 0.4)]), 0.5).map_err(|e| e.to_string())?;
    ensure!(unreachable.is_unreachable(), "all-below curve not flagged unreachable");
    Ok(format!("analytic METG = {value:.4} µs ({:.2}% error); exact, saturated, unreachable ok", err * 100.0))
}

// ----------------------------------------------------------------------------
// 4. statistics

fn statistics() -> Outcome {
    let ci = confidence_interval(&[1.0f64, 2.0, 3.0, 4.0, 5.0], 0.99).map_err(|e| e.to_string())?;
    ensure!((ci.mean - 3.0).abs() < 1e-12, "mean {}", ci.mean);
    ensure!((ci.half_width - 3.256).abs() <= 0.001, "half-width {}", ci.half_width);
    let flat = confidence_interval(&[4.2f64; 6], 0.99).map_err(|e| e.to_string())?;
    ensure!(flat.half_width == 0.0, "identical samples gave width {}", flat.half_width);
    Ok(format!("mean {} half-width {:.4}; identical samples width 0", ci.mean, ci.half_width))
}

// ----------------------------------------------------------------------------
// 5. kernel linearity and calibration

fn median_kernel_seconds(iterations: u64) -> f64 {
    let cfg = KernelConfig::compute_bound(iterations);
    let reps = if iterations < 1 << 16 { 51 } else { 7 };
    let mut s: Vec<f64> = (0..reps)
        .map(|k| {
            let t = Instant::now();
            black_box(execute_kernel(&cfg, black_box(k)));
            t.elapsed().as_secs_f64()
        })
        .collect();
    s.sort_by(f64::total_cmp);
    s[reps as usize / 2]
}

fn kernel_calibration() -> Outcome {
    let xs: Vec<f64> = (10..=20).map(|k| (1u64 << k) as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| median_kernel_seconds(x as u64)).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    ensure!(r2 >= 0.99, "R² = {r2:.5} < 0.99");

    let target = Duration::from_millis(100);
    let a = calibrate(KernelKind::ComputeBound, Precision::F64, target).map_err(|e| e.to_string())?;
    let b = calibrate(KernelKind::ComputeBound, Precision::F64, target).map_err(|e| e.to_string())?;
    let spread = (a.ns_per_iteration - b.ns_per_iteration).abs() / a.ns_per_iteration.min(b.ns_per_iteration);
    ensure!(spread <= 0.10, "calibrations {:.4} vs {:.4} ns/iter differ by {:.1}%", a.ns_per_iteration, b.ns_per_iteration, spread * 100.0);

    // anti-elision: a 2^20 kernel takes at least half its calibrated time
    let predicted = b.predicted_task_seconds(1 << 20);
    let measured = median_kernel_seconds(1 << 20);
    ensure!(measured >= 0.5 * predicted, "2^20 kernel ran in {measured:.3e}s, predicted {predicted:.3e}s");

    let (cores, note) = bench_cores();
    let g = build_graph(
        GraphSpec::new(cores, 20, PatternKind::Stencil1d).with_kernel(KernelConfig::compute_bound(1 << 20)),
    )
    .map_err(|e| e.to_string())?;
    let config = BackendConfig::new(BackendKind::ForkJoin, cores);
    run(&g, &config).map_err(|e| e.to_string())?;
    let mut fps: Vec<f64> = (0..5)
        .map(|_| run(&g, &config).map(|r| r.flops_executed as f64 / r.wall_seconds))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    fps.sort_by(f64::total_cmp);
    let peak = peak_flops(&b, cores);
    let ratio = fps[2] / peak;
    ensure!((0.8..=1.2).contains(&ratio), "large-grain FLOP/s {:.3e} is {:.1}% of peak {:.3e}", fps[2], ratio * 100.0, peak);
    Ok(with_note(
        format!(
            "R² = {r2:.5}; calibrations {:.4}/{:.4} ns/iter ({:.1}% apart); large-grain FLOP/s {:.1}% of peak",
            a.ns_per_iteration,
            b.ns_per_iteration,
            spread * 100.0,
            ratio * 100.0
        ),
        note,
    ))
}

// ----------------------------------------------------------------------------
// 6. qualitative shape, and 8. round trip (shares the sweep output)

const SHAPE_BACKENDS: &str = r#"["serial", "fork_join", "async_ws", "message_passing"]"#;

fn write_shape_plan(dir: &Path, cores: usize) -> std::path::PathBuf {
    let grains: Vec<String> = (2..=10).map(|k| (1u64 << (2 * k)).to_string()).collect();
    let plan = format!(
        r#"name = "shape"
output_dir = "out"
calibrate_inline = true
grains = [{grains}]
repetitions = 5

[[experiment]]
name = "single"
pattern = "stencil_1d"
backends = {SHAPE_BACKENDS}
cores = {cores}
shards_per_core = [1]
steps = 200
repetitions = 10

[[experiment]]
name = "overdecomposed"
pattern = "stencil_1d"
backends = {SHAPE_BACKENDS}
cores = {cores}
shards_per_core = [8, 16]
steps = 20
"#,
        grains = grains.join(", ")
    );
    let path = dir.join("plan.toml");
    std::fs::write(&path, plan).unwrap();
    path
}

struct ShapeRun {
    curves_csv: std::path::PathBuf,
    metg_csv: std::path::PathBuf,
    curves: Vec<CurveRow>,
    metg: Vec<tgbench_cli::records::MetgRow>,
}

fn shape_sweep(dir: &Path) -> Result<ShapeRun, String> {
    let (cores, _) = bench_cores();
    let plan = write_shape_plan(dir, cores);
    let out = commands::cmd_sweep(
        &SweepOptions {
            plan,
            cores,
            output_dir: None,
            calibration_target: Duration::from_millis(100),
        },
        |_| {},
    )
    .map_err(|e| e.to_string())?;
    Ok(ShapeRun {
        curves_csv: out.curves_csv,
        metg_csv: out.metg_csv,
        curves: out.curves,
        metg: out.metg,
    })
}

fn qualitative_shape(sweep: &Result<ShapeRun, String>) -> Outcome {
    let s = sweep.as_ref().map_err(|e| format!("sweep failed: {e}"))?;
    let (_, note) = bench_cores();
    let mut report = String::new();
    let mut violations = Vec::new();
    for backend in ["serial", "fork_join", "async_ws", "message_passing"] {
        let mut pts: Vec<&CurveRow> = s
            .curves
            .iter()
            .filter(|r| r.backend == backend && r.experiment == "single")
            .collect();
        pts.sort_by(|a, b| a.granularity_us.total_cmp(&b.granularity_us));
        ensure!(pts.len() == 9, "{backend}: {} points", pts.len());
        let mut max_drop = 0.0f64;
        for w in pts.windows(2) {
            let drop = w[0].efficiency - w[1].efficiency;
            max_drop = max_drop.max(drop);
            if drop > 0.05 {
                violations.push(format!(
                    "{backend}: efficiency falls from {:.3} at {:.2} µs to {:.3} at {:.2} µs",
                    w[0].efficiency, w[0].granularity_us, w[1].efficiency, w[1].granularity_us
                ));
            }
        }
        let top = pts.iter().find(|r| r.grain_iterations == 1 << 20).ok_or("no 2^20 point")?;
        if top.efficiency < 0.5 {
            violations.push(format!("{backend}: efficiency {:.3} at grain 2^20", top.efficiency));
        }
        let _ = write!(report, "{backend}: eff(2^20)={:.2} max drop {max_drop:.3} METG[spc]=", top.efficiency);
        for spc in [1usize, 8, 16] {
            let row = s
                .metg
                .iter()
                .find(|m| m.backend == backend && m.shards_per_core == spc)
                .ok_or(format!("{backend}: no METG row for spc {spc}"))?;
            if !row.metg_us.is_finite() || row.state == "unreachable" {
                violations.push(format!("{backend} spc {spc}: METG state {} value {}", row.state, row.metg_us));
            }
            let _ = write!(report, "{spc}:{:.2}µs({}) ", row.metg_us, row.state);
        }
        report.push_str("; ");
    }
    let report = with_note(report.trim_end_matches(&[' ', ';'][..]).to_string(), note);
    if violations.is_empty() {
        Ok(report)
    } else {
        Err(format!("{} | {report}", violations.join("; ")))
    }
}

// ----------------------------------------------------------------------------
// 7. variants

fn variants() -> Outcome {
    let (cores, note) = bench_cores();
    let rows = commands::cmd_variants(&VariantsOptions {
        workload: Workload {
            pattern: PatternKind::Stencil1d,
            width: None,
            steps: 100,
            grain: 4096,
            cores,
            shards_per_core: 1,
            output_bytes: 0,
            kernel: KernelKind::ComputeBound,
            precision: Precision::F64,
            repetitions: 5,
            warmup: 1,
            calibration: None,
            peak_flops_per_core: None,
            watchdog_floor: Duration::from_secs(60),
        },
        worker_stack: WorkerStack::Default,
        out: None,
    })
    .map_err(|e| e.to_string())?;
    ensure!(rows.len() == VARIANTS.len(), "{} rows", rows.len());
    for name in ["default", "fixed64-priority", "no-idle-detection", "shared-queue-transport", "combined"] {
        let r = rows.iter().find(|r| r.variant == name).ok_or(format!("missing variant {name}"))?;
        ensure!(r.grain_iterations == 4096, "{name} grain {}", r.grain_iterations);
        ensure!(r.tasks_per_second_ci99.is_finite() && r.relative_ci99_pct.is_finite(), "{name}: no 99% CI");
        ensure!(r.relative_change_pct.is_finite(), "{name}: no relative change");
    }
    ensure!(rows.iter().all(|r| r.dataflow_checksum == rows[0].dataflow_checksum), "checksums differ across variants");
    println!("{}", commands::format_variants(&rows).trim_end());
    let summary: Vec<String> = rows
        .iter()
        .skip(1)
        .map(|r| format!("{} {:+.1}±{:.1}%", r.variant, r.relative_change_pct, r.relative_ci99_pct))
        .collect();
    Ok(with_note(format!("vs default: {}; checksums identical", summary.join(", ")), note))
}

// ----------------------------------------------------------------------------
// 8. CSV round trip and exit codes

fn round_trip_and_exit_codes(dir: &Path, sweep: &Result<ShapeRun, String>) -> Outcome {
    let s = sweep.as_ref().map_err(|e| format!("sweep failed: {e}"))?;
    let again = dir.join("metg_again.csv");
    commands::cmd_metg(&s.curves_csv, 0.5, Some(&again)).map_err(|e| e.to_string())?;
    let a = std::fs::read(&s.metg_csv).map_err(|e| e.to_string())?;
    let b = std::fs::read(&again).map_err(|e| e.to_string())?;
    ensure!(a == b, "recomputed metg.csv differs from the sweep's");

    let bin = env!("CARGO_BIN_EXE_tgbench");
    let exec = |args: &[&str]| {
        Command::new(bin)
            .args(args)
            .current_dir(dir)
            .env_remove("TGBENCH_CORES")
            .output()
            .map_err(|e| e.to_string())
    };
    let out_csv = dir.join("runs.csv");
    let ok = exec(&[
        "run", "--backend", "serial", "--steps", "5", "--grain", "64", "--cores", "1", "--out",
        out_csv.to_str().unwrap(),
    ])?;
    ensure!(ok.status.code() == Some(0), "success case exited {:?}: {}", ok.status.code(), String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    ensure!(stdout.starts_with("backend,pattern,cores,"), "run did not print a CSV row");
    ensure!(std::fs::read_to_string(&out_csv).map_err(|e| e.to_string())?.lines().count() == 2, "run did not append one row");

    let usage = exec(&["run", "--backend", "no_such_backend"])?;
    ensure!(usage.status.code() == Some(2), "usage error exited {:?}", usage.status.code());
    ensure!(!usage.stderr.is_empty(), "usage error printed no diagnostic");

    let invalid = exec(&["run", "--pattern", "fft", "--width", "6", "--out", out_csv.to_str().unwrap()])?;
    let msg = String::from_utf8_lossy(&invalid.stderr);
    ensure!(invalid.status.code().is_some_and(|c| c != 0), "invalid spec exited 0");
    ensure!(msg.contains("invalid spec"), "invalid spec diagnostic: {msg}");
    Ok(format!(
        "metg.csv recomputed bit-identically ({} bytes); exit codes success=0 usage={} invalid-spec={}",
        a.len(),
        usage.status.code().unwrap(),
        invalid.status.code().unwrap()
    ))
}

// ----------------------------------------------------------------------------

fn check(name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let elapsed = start.elapsed();
    let result = result.and_then(|d| {
        if elapsed <= budget {
            Ok(d)
        } else {
            Err(format!("took {elapsed:.1?}, budget {budget:?} ({d})"))
        }
    });
    match &result {
        Ok(d) => println!("PASS  {name} ({elapsed:.1?}): {d}"),
        Err(d) => println!("FAIL  {name} ({elapsed:.1?}): {d}"),
    }
    result.is_ok()
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut ok = true;
    ok &= check("dependence oracle", Duration::from_secs(10), dependence_oracle);
    ok &= check("backend equivalence", Duration::from_secs(120), backend_equivalence);
    ok &= check("METG correctness", Duration::from_secs(1), metg_correctness);
    ok &= check("statistics", Duration::from_secs(1), statistics);
    ok &= check("kernel linearity and calibration", Duration::from_secs(180), kernel_calibration);
    let mut sweep = Err("not run".to_string());
    ok &= check("qualitative shape", Duration::from_secs(600), || {
        sweep = shape_sweep(dir.path());
        qualitative_shape(&sweep)
    });
    ok &= check("variant experiment", Duration::from_secs(300), variants);
    ok &= check("CSV round trip and exit codes", Duration::from_secs(60), || {
        round_trip_and_exit_codes(dir.path(), &sweep)
    });
    if !ok {
        std::process::exit(1);
    }
}
