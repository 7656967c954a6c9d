//! TOML experiment plans. See the README for the full schema.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use tgbench::{
    BackendConfig, BackendKind, GraphSpec, KernelConfig, KernelKind, Medium, PatternKind,
    Precision, PriorityMode, SchedulerConfig, WorkerStack,
};

use crate::error::CliError;

/// Powers of two from 2⁴ to 2²⁰.
pub fn default_grains() -> Vec<u64> {
    (4..=20).map(|k| 1u64 << k).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_repetitions() -> usize {
    5
}

fn default_threshold() -> f64 {
    0.5
}

fn default_watchdog_floor() -> f64 {
    60.0
}

fn default_shards() -> Vec<usize> {
    vec![1]
}

fn default_steps() -> usize {
    100
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Calibration file; relative paths resolve against the plan's directory.
    pub calibration: Option<PathBuf>,
    /// Calibrate before sweeping (and save to `calibration` if given).
    #[serde(default)]
    pub calibrate_inline: bool,
    #[serde(default = "default_grains")]
    pub grains: Vec<u64>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Overrides the efficiency denominator (per-core FLOP/s × cores).
    pub peak_flops_per_core: Option<f64>,
    #[serde(default = "default_watchdog_floor")]
    pub watchdog_floor_secs: f64,
    #[serde(rename = "experiment", default)]
    pub experiments: Vec<Experiment>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub pattern: PatternKind,
    pub backends: Vec<BackendKind>,
    /// Defaults to the resolved core count (flag or environment).
    pub cores: Option<usize>,
    #[serde(default = "default_shards")]
    pub shards_per_core: Vec<usize>,
    /// Defaults to cores × shards_per_core.
    pub width: Option<usize>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub output_bytes: usize,
    pub grains: Option<Vec<u64>>,
    pub repetitions: Option<usize>,
    pub kernel: Option<KernelKind>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub transport: Medium,
    #[serde(default = "yes")]
    pub steal: bool,
    #[serde(default)]
    pub priority_mode: PriorityMode,
    #[serde(default)]
    pub idle_detection: bool,
    #[serde(default)]
    pub worker_stack: WorkerStack,
}

/// One curve to measure.
#[derive(Debug, Clone)]
pub struct PlannedCurve {
    pub experiment: String,
    pub spec: GraphSpec,
    pub config: BackendConfig,
    pub grains: Vec<u64>,
    pub repetitions: usize,
}

impl ExperimentPlan {
    /// Parses a plan and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut plan: ExperimentPlan = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if plan.output_dir.is_relative() {
            plan.output_dir = base.join(&plan.output_dir);
        }
        if let Some(c) = &plan.calibration {
            if c.is_relative() {
                plan.calibration = Some(base.join(c));
            }
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::usage(format!("plan `{}`: {m}", self.name)));
        if self.experiments.is_empty() {
            return bad("no [[experiment]] entries".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad(format!("threshold {} outside (0, 1]", self.threshold));
        }
        if let Some(p) = self.peak_flops_per_core {
            if !(p > 0.0) {
                return bad("peak_flops_per_core must be positive".into());
            }
        }
        if let Some(c) = &self.calibration {
            if !c.exists() && !self.calibrate_inline {
                return bad(format!(
                    "calibration file {} does not exist and calibrate_inline is off",
                    c.display()
                ));
            }
        }
        let mut names = HashSet::new();
        for e in &self.experiments {
            if !names.insert(e.name.as_str()) {
                return bad(format!("duplicate experiment name `{}`", e.name));
            }
            if e.backends.is_empty() {
                return bad(format!("experiment `{}` lists no backends", e.name));
            }
            if e.shards_per_core.iter().any(|&s| s == 0) {
                return bad(format!(
                    "experiment `{}`: shards_per_core must be ≥ 1",
                    e.name
                ));
            }
            if e.grains.as_ref().unwrap_or(&self.grains).is_empty() {
                return bad(format!("experiment `{}` has an empty grain list", e.name));
            }
            if e.repetitions == Some(0) {
                return bad(format!("experiment `{}`: repetitions must be ≥ 1", e.name));
            }
        }
        Ok(())
    }

    /// Expands experiments into curves: backends × shards_per_core.
    pub fn curves(
        &self,
        default_cores: usize,
        ns_per_iteration: Option<f64>,
    ) -> Result<Vec<PlannedCurve>, CliError> {
        let mut out = Vec::new();
        for e in &self.experiments {
            let cores = e.cores.unwrap_or(default_cores);
            for &backend in &e.backends {
                for &spc in &e.shards_per_core {
                    let mut config = BackendConfig::new(backend, cores)
                        .with_shards_per_core(spc)
                        .with_scheduler(SchedulerConfig {
                            work_stealing: e.steal,
                            priority_mode: e.priority_mode,
                            idle_detection: e.idle_detection,
                            worker_stack: e.worker_stack,
                        })
                        .with_medium(e.transport);
                    config.watchdog.floor =
                        Duration::from_secs_f64(self.watchdog_floor_secs.max(0.0));
                    config.watchdog.ns_per_iteration = ns_per_iteration;
                    config.validate()?;
                    let kernel = match e.kernel.unwrap_or(KernelKind::ComputeBound) {
                        KernelKind::ComputeBound => KernelConfig::compute_bound(0),
                        KernelKind::Empty => KernelConfig::empty(),
                    }
                    .with_precision(e.precision);
                    let spec = GraphSpec::new(
                        e.width.unwrap_or(config.default_width()),
                        e.steps,
                        e.pattern,
                    )
                    .with_kernel(kernel)
                    .with_output_bytes(e.output_bytes);
                    spec.validate()?;
                    out.push(PlannedCurve {
                        experiment: e.name.clone(),
                        spec,
                        config,
                        grains: e.grains.clone().unwrap_or_else(|| self.grains.clone()),
                        repetitions: e.repetitions.unwrap_or(self.repetitions),
                    });
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAN: &str = r#"
name = "demo"
grains = [16, 256]

[[experiment]]
name = "stencil"
pattern = "stencil_1d"
backends = ["serial", "async_ws"]
cores = 2
shards_per_core = [1, 4]

[[experiment]]
name = "fft"
pattern = "fft"
backends = ["message_passing"]
transport = "local_socket"
priority_mode = "bitvector"
repetitions = 2
"#;

    fn parse(text: &str) -> ExperimentPlan {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn defaults_and_expansion() {
        let plan = parse(PLAN);
        plan.validate().unwrap();
        assert_eq!(plan.repetitions, 5);
        assert_eq!(plan.threshold, 0.5);
        let curves = plan.curves(4, Some(0.3)).unwrap();
        assert_eq!(curves.len(), 5);
        assert_eq!(curves[1].spec.width, 8);
        assert_eq!(curves[1].config.shards_per_core, 4);
        let fft = &curves[4];
        assert_eq!(fft.config.cores, 4);
        assert_eq!(fft.spec.width, 4);
        assert_eq!(fft.repetitions, 2);
        assert_eq!(fft.config.transport.medium, Medium::LocalSocket);
        assert_eq!(fft.config.scheduler.priority_mode, PriorityMode::Bitvector);
        assert_eq!(fft.config.watchdog.ns_per_iteration, Some(0.3));
    }

    #[test]
    fn default_ladder_spans_2_4_to_2_20() {
        let g = default_grains();
        assert_eq!(g.first(), Some(&16));
        assert_eq!(g.last(), Some(&(1 << 20)));
        assert_eq!(g.len(), 17);
    }

    #[test]
    fn rejects_duplicates_and_unknown_fields() {
        let dup = format!(
            "{PLAN}\n[[experiment]]\nname = \"fft\"\npattern = \"tree\"\nbackends = [\"serial\"]\n"
        );
        assert!(parse(&dup).validate().is_err());
        assert!(toml::from_str::<ExperimentPlan>("name = \"x\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn missing_calibration_needs_inline_flag() {
        let mut plan = parse(PLAN);
        plan.calibration = Some(PathBuf::from("/definitely/not/here.toml"));
        assert!(plan.validate().is_err());
        plan.calibrate_inline = true;
        plan.validate().unwrap();
    }

    #[test]
    fn invalid_graph_is_a_usage_error() {
        let plan = parse(
            "name = \"x\"\n[[experiment]]\nname = \"a\"\npattern = \"fft\"\nbackends = [\"serial\"]\nwidth = 6\n",
        );
        let err = plan.curves(1, None).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_USAGE);
    }
}
