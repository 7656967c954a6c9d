//! Execution backends.
//!
//! Every backend honours the same contract: each task runs exactly once,
//! after all of its dependencies finished and their payloads arrived, and
//! the resulting [`RunResult::dataflow_checksum`] equals the serial one.
//!
//! | backend           | execution model                                        |
//! |-------------------|--------------------------------------------------------|
//! | `serial`          | reference executor, task order `(t, i)`                |
//! | `fork_join`       | persistent pool, barrier after every timestep          |
//! | `async_ws`        | dependence counters, per-worker deques, work stealing  |
//! | `message_passing` | ranks owning column blocks, explicit payload messages  |

mod async_ws;
mod dataflow;
mod fork_join;
mod message_passing;
mod queue;
mod serial;
pub mod transport;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU8, AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use crossbeam_utils::Backoff;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, TaskGraph};

pub use dataflow::{fold_run_checksum, payload_digest, task_seed, TaskOutput};
pub use queue::BitPriority;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("failed to start worker: {0}")]
    WorkerStartup(#[source] std::io::Error),
    #[error(
        "watchdog: run exceeded {limit:?} with {outstanding} of {total} tasks outstanding; \
         this indicates a dependency-handling bug in the `{backend}` backend"
    )]
    Deadlock {
        backend: BackendKind,
        limit: Duration,
        outstanding: usize,
        total: usize,
    },
    #[error("transport failure: {0}")]
    Transport(#[source] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Serial,
    ForkJoin,
    AsyncWs,
    MessagePassing,
}

impl BackendKind {
    pub const ALL: [BackendKind; 4] = [
        BackendKind::Serial,
        BackendKind::ForkJoin,
        BackendKind::AsyncWs,
        BackendKind::MessagePassing,
    ];
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Serial => "serial",
            BackendKind::ForkJoin => "fork_join",
            BackendKind::AsyncWs => "async_ws",
            BackendKind::MessagePassing => "message_passing",
        })
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackendKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown backend `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityMode {
    #[default]
    None,
    /// 64-bit integer keys.
    Fixed64,
    /// Arbitrary-length bit-string keys, compared lexicographically.
    Bitvector,
}

impl fmt::Display for PriorityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorityMode::None => "none",
            PriorityMode::Fixed64 => "fixed64",
            PriorityMode::Bitvector => "bitvector",
        })
    }
}

impl FromStr for PriorityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(PriorityMode::None),
            "fixed64" => Ok(PriorityMode::Fixed64),
            "bitvector" => Ok(PriorityMode::Bitvector),
            other => Err(format!("unknown priority mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerStack {
    Small,
    #[default]
    Default,
}

impl WorkerStack {
    const SMALL_BYTES: usize = 128 * 1024;

    fn apply(self, builder: std::thread::Builder) -> std::thread::Builder {
        match self {
            WorkerStack::Small => builder.stack_size(Self::SMALL_BYTES),
            WorkerStack::Default => builder,
        }
    }
}

impl fmt::Display for WorkerStack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkerStack::Small => "small",
            WorkerStack::Default => "default",
        })
    }
}

impl FromStr for WorkerStack {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(WorkerStack::Small),
            "default" => Ok(WorkerStack::Default),
            other => Err(format!("unknown worker stack `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub work_stealing: bool,
    pub priority_mode: PriorityMode,
    /// Poll for quiescence on every scheduling iteration.
    pub idle_detection: bool,
    pub worker_stack: WorkerStack,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            work_stealing: true,
            priority_mode: PriorityMode::None,
            idle_detection: false,
            worker_stack: WorkerStack::Default,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Medium {
    /// In-process queues between ranks.
    #[default]
    SharedQueue,
    /// Loopback TCP streams carrying length-prefixed frames.
    LocalSocket,
}

impl fmt::Display for Medium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Medium::SharedQueue => "shared_queue",
            Medium::LocalSocket => "local_socket",
        })
    }
}

impl FromStr for Medium {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared_queue" => Ok(Medium::SharedQueue),
            "local_socket" => Ok(Medium::LocalSocket),
            other => Err(format!("unknown transport `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransportConfig {
    pub medium: Medium,
}

/// Aborts runs that take far longer than the kernel work alone explains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Watchdog {
    /// Allowed multiple of the analytic lower bound.
    pub factor: f64,
    /// Lower limit on the allowed wall time.
    pub floor: Duration,
    /// Kernel cost used for the lower bound; without it only `floor` applies.
    pub ns_per_iteration: Option<f64>,
}

impl Default for Watchdog {
    fn default() -> Self {
        Watchdog {
            factor: 100.0,
            floor: Duration::from_secs(60),
            ns_per_iteration: None,
        }
    }
}

impl Watchdog {
    /// Wall time below which the graph cannot possibly finish on `cores` cores.
    pub fn lower_bound(&self, graph: &TaskGraph, cores: usize) -> Duration {
        let ns = self.ns_per_iteration.unwrap_or(0.0);
        let secs = graph.total_tasks() as f64 * graph.kernel().iterations as f64 * ns * 1e-9
            / cores.max(1) as f64;
        Duration::from_secs_f64(secs.max(0.0))
    }

    pub fn limit(&self, graph: &TaskGraph, cores: usize) -> Duration {
        self.lower_bound(graph, cores)
            .mul_f64(self.factor)
            .max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub cores: usize,
    /// Overdecomposition factor: tasks per core per timestep.
    pub shards_per_core: usize,
    pub scheduler: SchedulerConfig,
    pub transport: TransportConfig,
    pub watchdog: Watchdog,
    /// Record per-task start/finish timestamps.
    pub trace: bool,
}

impl BackendConfig {
    pub fn new(kind: BackendKind, cores: usize) -> Self {
        BackendConfig {
            kind,
            cores,
            shards_per_core: 1,
            scheduler: SchedulerConfig::default(),
            transport: TransportConfig::default(),
            watchdog: Watchdog::default(),
            trace: false,
        }
    }

    pub fn with_shards_per_core(mut self, shards_per_core: usize) -> Self {
        self.shards_per_core = shards_per_core;
        self
    }

    pub fn with_scheduler(mut self, scheduler: SchedulerConfig) -> Self {
        self.scheduler = scheduler;
        self
    }

    pub fn with_medium(mut self, medium: Medium) -> Self {
        self.transport.medium = medium;
        self
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    /// Graph width implied by the overdecomposition factor.
    pub fn default_width(&self) -> usize {
        self.cores * self.shards_per_core
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.cores == 0 {
            return Err(BackendError::ConfigMismatch(
                "cores must be at least 1".into(),
            ));
        }
        if self.shards_per_core == 0 {
            return Err(BackendError::ConfigMismatch(
                "shards_per_core must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Human-readable scheduler and transport knobs, stable across runs.
    pub fn knobs_label(&self) -> String {
        format!(
            "steal={};priority={};idle_detection={};stack={};transport={}",
            self.scheduler.work_stealing as u8,
            self.scheduler.priority_mode,
            self.scheduler.idle_detection as u8,
            self.scheduler.worker_stack,
            self.transport.medium,
        )
    }
}

/// Start and finish of one task, in nanoseconds since the run's time origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpan {
    pub timestep: usize,
    pub index: usize,
    pub worker: usize,
    pub start_ns: u64,
    pub finish_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub wall_seconds: f64,
    pub tasks_executed: usize,
    pub edges_satisfied: usize,
    pub dataflow_checksum: u64,
    pub flops_executed: u64,
    pub trace: Option<Vec<TaskSpan>>,
}

/// Maps each point index to the worker owning it: contiguous blocks of
/// `shards_per_core` indices per worker.
pub fn shard_assignment(
    width: usize,
    cores: usize,
    shards_per_core: usize,
) -> Result<Vec<usize>, BackendError> {
    if cores == 0 || shards_per_core == 0 || width != cores * shards_per_core {
        return Err(BackendError::ConfigMismatch(format!(
            "width {width} is not cores {cores} × shards_per_core {shards_per_core}"
        )));
    }
    Ok((0..width).map(|i| i / shards_per_core).collect())
}

/// Balanced block owner of column `index` when the width is not tied to
/// the overdecomposition factor.
pub(crate) fn block_owner(index: usize, width: usize, workers: usize) -> usize {
    index * workers / width
}

/// Executes `graph` under `config`, timing only the graph execution.
pub fn run(graph: &TaskGraph, config: &BackendConfig) -> Result<RunResult, BackendError> {
    config.validate()?;
    match config.kind {
        BackendKind::Serial => serial::run(graph, config),
        BackendKind::ForkJoin => fork_join::run(graph, config),
        BackendKind::AsyncWs => async_ws::run(graph, config),
        BackendKind::MessagePassing => message_passing::run(graph, config),
    }
}

const GATE_WAIT: u8 = 0;
const GATE_GO: u8 = 1;
const GATE_ABORT: u8 = 2;

/// Holds spawned workers until the time origin is set.
pub(crate) struct StartGate {
    state: AtomicU8,
    ready: AtomicUsize,
}

impl StartGate {
    pub(crate) fn new() -> Self {
        StartGate {
            state: AtomicU8::new(GATE_WAIT),
            ready: AtomicUsize::new(0),
        }
    }

    /// Called by a worker; returns false if the run was aborted before start.
    pub(crate) fn arrive_and_wait(&self) -> bool {
        self.ready.fetch_add(1, Ordering::AcqRel);
        let backoff = Backoff::new();
        loop {
            match self.state.load(Ordering::Acquire) {
                GATE_GO => return true,
                GATE_ABORT => return false,
                _ => backoff.snooze(),
            }
        }
    }

    pub(crate) fn wait_for(&self, workers: usize) {
        let backoff = Backoff::new();
        while self.ready.load(Ordering::Acquire) < workers {
            backoff.snooze();
        }
    }

    pub(crate) fn open(&self) {
        self.state.store(GATE_GO, Ordering::Release);
    }

    pub(crate) fn abort(&self) {
        self.state.store(GATE_ABORT, Ordering::Release);
    }
}

/// Shared deadline plus abort flag checked by waiting workers.
pub(crate) struct Deadline {
    origin: OnceLock<Instant>,
    limit: Duration,
    aborted: AtomicBool,
}

impl Deadline {
    pub(crate) fn new(limit: Duration) -> Self {
        Deadline {
            origin: OnceLock::new(),
            limit,
            aborted: AtomicBool::new(false),
        }
    }

    /// Sets the time origin of the run and returns it.
    pub(crate) fn start(&self) -> Instant {
        *self.origin.get_or_init(Instant::now)
    }

    pub(crate) fn origin(&self) -> Instant {
        *self.origin.get().expect("run started")
    }

    /// True once the limit passed or another worker aborted.
    pub(crate) fn expired(&self) -> bool {
        if self.aborted.load(Ordering::Relaxed) {
            return true;
        }
        if self.origin().elapsed() > self.limit {
            self.aborted.store(true, Ordering::Relaxed);
            return true;
        }
        false
    }

    pub(crate) fn abort(&self) {
        self.aborted.store(true, Ordering::Relaxed);
    }

    pub(crate) fn aborted(&self) -> bool {
        self.aborted.load(Ordering::Relaxed)
    }

    pub(crate) fn limit(&self) -> Duration {
        self.limit
    }
}

pub(crate) fn nanos_since(origin: Instant) -> u64 {
    origin.elapsed().as_nanos() as u64
}

pub(crate) fn spawn_error(e: std::io::Error) -> BackendError {
    BackendError::WorkerStartup(e)
}
