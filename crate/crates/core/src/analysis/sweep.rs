use std::fmt;

use super::{
    confidence_interval, granularity_us, real, AnalysisError, CurvePoint, MetgCurve, Real,
};
use crate::backends::{self, BackendConfig, BackendError, RunResult};
use crate::graph::{GraphSpec, TaskGraph};

/// Executes one run. Lets sweeps swap in a deterministic time source.
pub trait Runner {
    fn run(&mut self, graph: &TaskGraph, config: &BackendConfig)
        -> Result<RunResult, BackendError>;
}

/// Runs graphs on the real backends.
#[derive(Debug, Default, Clone, Copy)]
pub struct LiveRunner;

impl Runner for LiveRunner {
    fn run(
        &mut self,
        graph: &TaskGraph,
        config: &BackendConfig,
    ) -> Result<RunResult, BackendError> {
        backends::run(graph, config)
    }
}

impl<F> Runner for F
where
    F: FnMut(&TaskGraph, &BackendConfig) -> Result<RunResult, BackendError>,
{
    fn run(
        &mut self,
        graph: &TaskGraph,
        config: &BackendConfig,
    ) -> Result<RunResult, BackendError> {
        self(graph, config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeakSource {
    Override,
    BestMeasured,
    Calibration,
}

impl fmt::Display for PeakSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeakSource::Override => "override",
            PeakSource::BestMeasured => "best_measured",
            PeakSource::Calibration => "calibration",
        })
    }
}

/// Where the efficiency denominator comes from, in priority order:
/// explicit override, best FLOP/s measured in the sweep, calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PeakPolicy {
    pub override_flops: Option<f64>,
    pub calibration_flops: Option<f64>,
}

impl PeakPolicy {
    pub fn resolve(&self, best_measured: f64) -> Option<(f64, PeakSource)> {
        if let Some(p) = self.override_flops.filter(|p| *p > 0.0) {
            return Some((p, PeakSource::Override));
        }
        if best_measured > 0.0 {
            return Some((best_measured, PeakSource::BestMeasured));
        }
        self.calibration_flops
            .filter(|p| *p > 0.0)
            .map(|p| (p, PeakSource::Calibration))
    }
}

/// A sweep that stopped early, with the points measured before the failure.
#[derive(Debug)]
pub struct SweepError<T> {
    pub partial: MetgCurve<T>,
    pub source: AnalysisError,
}

impl<T> fmt::Display for SweepError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sweep aborted after {} points: {}",
            self.partial.points.len(),
            self.source
        )
    }
}

impl<T: fmt::Debug> std::error::Error for SweepError<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

struct Measured {
    grain: u64,
    walls: Vec<f64>,
    flops: u64,
    tasks: usize,
    checksum: u64,
}

fn aggregate<T: Real>(m: &Measured, cores: usize, peak: Option<f64>) -> CurvePoint<T> {
    let walls: Vec<T> = m.walls.iter().map(|&w| real(w)).collect();
    let (mean, ci) = match confidence_interval(&walls, real(0.99)) {
        Ok(ci) => (ci.mean, ci.half_width),
        Err(_) => (walls[0], T::nan()),
    };
    let flops_per_second = real::<T>(m.flops as f64) / mean;
    let (efficiency, anomaly) = match peak {
        Some(p) => {
            let raw = flops_per_second / real(p);
            (raw.max(T::zero()).min(T::one()), raw > T::one())
        }
        None => (T::zero(), false),
    };
    CurvePoint {
        grain_iterations: m.grain,
        granularity_us: granularity_us(mean, cores, m.tasks),
        efficiency,
        wall_seconds_mean: mean,
        wall_seconds_ci99: ci,
        repetitions: m.walls.len(),
        flops: m.flops,
        flops_per_second,
        tasks: m.tasks,
        dataflow_checksum: m.checksum,
        calibration_anomaly: anomaly,
    }
}

fn build_curve<T: Real>(
    config: &BackendConfig,
    template: &GraphSpec,
    measured: &[Measured],
    peak: &PeakPolicy,
) -> MetgCurve<T> {
    let best = measured
        .iter()
        .map(|m| m.flops as f64 * m.walls.len() as f64 / m.walls.iter().sum::<f64>())
        .fold(0.0, f64::max);
    let resolved = peak.resolve(best).map(|(p, _)| p);
    let mut curve = MetgCurve::new(
        config.kind.to_string(),
        template.pattern,
        config.cores,
        config.shards_per_core,
    );
    curve.peak_flops = resolved.map(real).unwrap_or_else(T::nan);
    curve.points = measured
        .iter()
        .map(|m| aggregate(m, config.cores, resolved))
        .collect();
    curve.points.sort_by_key(|p| p.grain_iterations);
    curve
}

/// Measures one efficiency curve.
///
/// Grains run from largest to smallest. Each grain gets one untimed warm-up
/// run followed by `repetitions` timed runs. `on_point` sees every point as
/// soon as it is measured, normalized against the peak known so far.
pub fn sweep<T: Real, R: Runner>(
    template: &GraphSpec,
    config: &BackendConfig,
    grains: &[u64],
    repetitions: usize,
    peak: &PeakPolicy,
    runner: &mut R,
    mut on_point: impl FnMut(&CurvePoint<T>),
) -> Result<MetgCurve<T>, SweepError<T>> {
    let fail = |measured: &[Measured], source: AnalysisError| SweepError {
        partial: build_curve(config, template, measured, peak),
        source,
    };
    if grains.is_empty() {
        return Err(fail(&[], AnalysisError::EmptyGrainList));
    }
    if repetitions == 0 {
        return Err(fail(&[], AnalysisError::ZeroRepetitions));
    }
    let mut order: Vec<u64> = grains.to_vec();
    order.sort_unstable_by(|a, b| b.cmp(a));
    order.dedup();

    let mut measured: Vec<Measured> = Vec::with_capacity(order.len());
    for grain in order {
        let mut spec = template.clone();
        spec.kernel.iterations = grain;
        let graph = TaskGraph::new(spec).map_err(|e| fail(&measured, e.into()))?;
        runner
            .run(&graph, config)
            .map_err(|e| fail(&measured, e.into()))?;
        let mut m = Measured {
            grain,
            walls: Vec::with_capacity(repetitions),
            flops: 0,
            tasks: 0,
            checksum: 0,
        };
        for _ in 0..repetitions {
            let r = runner
                .run(&graph, config)
                .map_err(|e| fail(&measured, e.into()))?;
            m.walls.push(r.wall_seconds);
            m.flops = r.flops_executed;
            m.tasks = r.tasks_executed;
            m.checksum = r.dataflow_checksum;
        }
        measured.push(m);
        let provisional = build_curve::<T>(config, template, &measured, peak);
        if let Some(p) = provisional
            .points
            .iter()
            .find(|p| p.grain_iterations == grain)
        {
            on_point(p);
        }
    }
    Ok(build_curve(config, template, &measured, peak))
}
