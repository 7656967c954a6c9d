//! Kernel timing properties. Timings use the median of several samples to
//! stay robust on shared machines.

use std::hint::black_box;
use std::time::{Duration, Instant};

use tgbench::kernel::FLOPS_PER_ITERATION;
use tgbench::{
    build_graph, calibrate, execute_kernel, peak_flops, run, BackendConfig, BackendKind,
    Calibration, GraphSpec, KernelConfig, KernelError, KernelKind, PatternKind, Precision,
};

fn median_seconds(iterations: u64) -> f64 {
    let cfg = KernelConfig::compute_bound(iterations);
    let mut samples: Vec<f64> = (0..5)
        .map(|s| {
            let start = Instant::now();
            black_box(execute_kernel(&cfg, black_box(s)));
            start.elapsed().as_secs_f64()
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[2]
}

fn calibration() -> Calibration {
    calibrate(
        KernelKind::ComputeBound,
        Precision::F64,
        Duration::from_millis(20),
    )
    .unwrap()
}

#[test]
fn runtime_is_at_least_half_the_calibrated_prediction() {
    let cal = calibration();
    let predicted = cal.predicted_task_seconds(1 << 20);
    let measured = median_seconds(1 << 20);
    assert!(
        measured >= 0.5 * predicted,
        "measured {measured:.3e}s < half of predicted {predicted:.3e}s"
    );
}

#[test]
fn wall_time_grows_linearly() {
    let xs: Vec<f64> = (12..=18).map(|k| (1u64 << k) as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| median_seconds(x as u64)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(r2 >= 0.98, "R² = {r2}");
}

#[test]
fn checksum_depends_on_seed_and_precision() {
    let f64k = KernelConfig::compute_bound(1000);
    let f32k = f64k.with_precision(Precision::F32);
    assert_eq!(execute_kernel(&f64k, 7), execute_kernel(&f64k, 7));
    assert_ne!(execute_kernel(&f64k, 7), execute_kernel(&f64k, 8));
    assert_ne!(execute_kernel(&f64k, 7), execute_kernel(&f32k, 7));
    let empty = KernelConfig::empty();
    assert_eq!(
        execute_kernel(&empty.with_iterations(0), 3),
        execute_kernel(&empty.with_iterations(1 << 40), 3)
    );
}

#[test]
fn flop_accounting() {
    assert_eq!(FLOPS_PER_ITERATION, 32);
    assert_eq!(KernelConfig::compute_bound(10).flops_per_task(), 320);
    assert_eq!(
        KernelConfig::empty().with_iterations(10).flops_per_task(),
        0
    );
    let mut cal = Calibration::from_ns_per_iteration(1.0);
    cal.flops_per_iteration = 2;
    assert_eq!(peak_flops(&cal, 1), 2e9);
    assert_eq!(peak_flops(&cal, 48), 96e9);
}

#[test]
fn calibration_rejects_empty_kernel_and_short_targets() {
    assert!(matches!(
        calibrate(KernelKind::Empty, Precision::F64, Duration::from_millis(10)),
        Err(KernelError::EmptyKernel)
    ));
    assert!(matches!(
        calibrate(
            KernelKind::ComputeBound,
            Precision::F64,
            Duration::from_micros(10)
        ),
        Err(KernelError::TargetTooShort(_))
    ));
}

#[test]
fn calibration_file_round_trips() {
    let cal = calibration();
    assert!(cal.ns_per_iteration > 0.0);
    assert!(cal.samples >= 5);
    assert!(cal.dispersion >= 0.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cal.toml");
    cal.save(&path).unwrap();
    let back = Calibration::load(&path).unwrap();
    assert_eq!(back, cal);
    assert_eq!(back.fingerprint(), cal.fingerprint());
    std::fs::write(&path, "ns_per_iteration = -1.0\n").unwrap();
    assert!(Calibration::load(&path).is_err());
}

#[test]
fn trivial_fork_join_tracks_calibration() {
    let cal = calibration();
    let cores = 1;
    let steps = 4;
    let grain = 1u64 << 20;
    let g = build_graph(
        GraphSpec::new(cores, steps, PatternKind::Trivial)
            .with_kernel(KernelConfig::compute_bound(grain)),
    )
    .unwrap();
    let config = BackendConfig::new(BackendKind::ForkJoin, cores);
    let mut walls: Vec<f64> = (0..3)
        .map(|_| run(&g, &config).unwrap().wall_seconds)
        .collect();
    walls.sort_by(f64::total_cmp);
    let bound = grain as f64 * cal.ns_per_iteration * 1e-9 * steps as f64;
    let ratio = walls[1] / bound;
    assert!((0.5..=2.0).contains(&ratio), "wall/bound = {ratio}");
}
