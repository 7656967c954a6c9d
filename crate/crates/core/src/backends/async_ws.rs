//! Work-stealing dataflow executor.
//!
//! Each task carries a dependence counter. Finishing a task decrements the
//! counters of its reverse dependencies; a task whose counter reaches zero is
//! pushed onto the ready queue of the worker owning its column. Idle workers
//! steal from the others when stealing is enabled.

use std::hint::black_box;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::thread;
use std::time::Instant;

use crossbeam_utils::Backoff;

use super::dataflow::{execute_task, fold_run_checksum, TaskOutput};
use super::queue::ReadyQueue;
use super::{
    block_owner, nanos_since, spawn_error, BackendConfig, BackendError, BackendKind, Deadline,
    RunResult, StartGate, TaskSpan,
};
use crate::graph::TaskGraph;

struct Shared<'g> {
    graph: &'g TaskGraph,
    queues: Vec<ReadyQueue>,
    counters: Vec<AtomicU32>,
    store: Vec<OnceLock<TaskOutput>>,
    remaining: AtomicUsize,
    end: OnceLock<Instant>,
    deadline: Deadline,
    work_stealing: bool,
    idle_detection: bool,
}

#[derive(Default)]
struct WorkerStats {
    tasks: usize,
    edges: usize,
    spans: Vec<TaskSpan>,
}

impl Shared<'_> {
    fn owner(&self, index: usize) -> usize {
        block_owner(index, self.graph.width(), self.queues.len())
    }

    fn enqueue(&self, id: usize) {
        let point = self.graph.task_point(id);
        self.queues[self.owner(point.index)].push(id as u32, point.timestep);
    }

    /// Sets up counters and seeds the queues. Runs inside the timed region.
    fn initialize(&self) {
        let width = self.graph.width();
        for t in 0..self.graph.timesteps() {
            for i in 0..width {
                let id = t * width + i;
                let n = self.graph.deps_unchecked(t, i).len() as u32;
                self.counters[id].store(n, Ordering::Relaxed);
                if n == 0 {
                    self.enqueue(id);
                }
            }
        }
    }

    fn find_task(&self, me: usize) -> Option<u32> {
        if let Some(task) = self.queues[me].pop() {
            return Some(task);
        }
        if self.work_stealing {
            let n = self.queues.len();
            for k in 1..n {
                if let Some(task) = self.queues[(me + k) % n].steal() {
                    return Some(task);
                }
            }
        }
        None
    }

    /// Quiescence check: nothing queued anywhere and nothing left to run.
    fn quiescent(&self) -> bool {
        let queued: usize = self.queues.iter().map(ReadyQueue::len).sum();
        queued == 0 && self.remaining.load(Ordering::Acquire) == 0
    }

    fn execute(&self, id: usize, me: usize, stats: &mut WorkerStats, trace: bool) {
        let graph = self.graph;
        let width = graph.width();
        let point = graph.task_point(id);
        let (t, i) = (point.timestep, point.index);
        let origin = self.deadline.origin();
        let start_ns = if trace { nanos_since(origin) } else { 0 };

        let deps = graph.deps_unchecked(t, i);
        stats.edges += deps.len();
        let base = t.wrapping_sub(1).wrapping_mul(width);
        let out = execute_task(
            graph,
            t,
            i,
            deps.map(|j| {
                let input = self.store[base + j].get().expect("dependency finished");
                (input.checksum, &input.payload[..])
            }),
        );
        let _ = self.store[id].set(out);
        stats.tasks += 1;
        if trace {
            stats.spans.push(TaskSpan {
                timestep: t,
                index: i,
                worker: me,
                start_ns,
                finish_ns: nanos_since(origin),
            });
        }

        for j in graph.reverse_deps_unchecked(t, i) {
            let next = (t + 1) * width + j;
            if self.counters[next].fetch_sub(1, Ordering::AcqRel) == 1 {
                self.enqueue(next);
            }
        }
        if self.remaining.fetch_sub(1, Ordering::AcqRel) == 1 {
            let _ = self.end.set(Instant::now());
        }
    }

    fn worker_loop(&self, me: usize, trace: bool) -> WorkerStats {
        let mut stats = WorkerStats::default();
        let backoff = Backoff::new();
        loop {
            let task = self.find_task(me);
            if self.idle_detection {
                black_box(self.quiescent());
            }
            match task {
                Some(id) => {
                    backoff.reset();
                    self.execute(id as usize, me, &mut stats, trace);
                    if stats.tasks % 64 == 0 && self.deadline.expired() {
                        break;
                    }
                }
                None => {
                    if self.remaining.load(Ordering::Acquire) == 0 || self.deadline.expired() {
                        break;
                    }
                    backoff.snooze();
                }
            }
        }
        stats
    }
}

pub(super) fn run(graph: &TaskGraph, config: &BackendConfig) -> Result<RunResult, BackendError> {
    if graph.total_tasks() > u32::MAX as usize {
        return Err(BackendError::ConfigMismatch(
            "async_ws supports at most 2^32 tasks".into(),
        ));
    }
    let workers = config.cores;
    let total = graph.total_tasks();
    let shared = Shared {
        graph,
        queues: (0..workers)
            .map(|_| ReadyQueue::new(config.scheduler.priority_mode))
            .collect(),
        counters: (0..total).map(|_| AtomicU32::new(0)).collect(),
        store: (0..total).map(|_| OnceLock::new()).collect(),
        remaining: AtomicUsize::new(total),
        end: OnceLock::new(),
        deadline: Deadline::new(config.watchdog.limit(graph, workers)),
        work_stealing: config.scheduler.work_stealing,
        idle_detection: config.scheduler.idle_detection,
    };
    let gate = StartGate::new();

    let outcome = thread::scope(|s| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let builder = config
                .scheduler
                .worker_stack
                .apply(thread::Builder::new().name(format!("async-ws-{w}")));
            let (shared, gate) = (&shared, &gate);
            let trace = config.trace;
            let spawned = builder.spawn_scoped(s, move || {
                if !gate.arrive_and_wait() {
                    return WorkerStats::default();
                }
                shared.worker_loop(w, trace)
            });
            match spawned {
                Ok(h) => handles.push(h),
                Err(e) => {
                    gate.abort();
                    return Err(spawn_error(e));
                }
            }
        }
        gate.wait_for(workers);
        shared.deadline.start();
        shared.initialize();
        gate.open();
        Ok(handles
            .into_iter()
            .map(|h| h.join().expect("async_ws worker panicked"))
            .collect::<Vec<_>>())
    })?;

    let tasks: usize = outcome.iter().map(|s| s.tasks).sum();
    let Some(end) = shared.end.get() else {
        shared.deadline.abort();
        return Err(BackendError::Deadlock {
            backend: BackendKind::AsyncWs,
            limit: shared.deadline.limit(),
            outstanding: total - tasks,
            total,
        });
    };
    let wall_seconds = (*end - shared.deadline.origin()).as_secs_f64();
    let checksum = fold_run_checksum(
        shared
            .store
            .iter()
            .map(|o| o.get().expect("task ran").checksum),
    );
    let trace = config.trace.then(|| {
        outcome
            .iter()
            .flat_map(|s| s.spans.iter().copied())
            .collect()
    });
    Ok(RunResult {
        wall_seconds,
        tasks_executed: tasks,
        edges_satisfied: outcome.iter().map(|s| s.edges).sum(),
        dataflow_checksum: checksum,
        flops_executed: graph.kernel().flops_per_task() * tasks as u64,
        trace,
    })
}
