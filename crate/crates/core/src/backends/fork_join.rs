//! Barrier executor: a persistent pool splits each timestep across workers
//! and synchronizes before the next one.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Barrier, OnceLock};
use std::thread;
use std::time::Instant;

use super::dataflow::{execute_task, fold_run_checksum, TaskOutput};
use super::{
    nanos_since, spawn_error, BackendConfig, BackendError, BackendKind, Deadline, RunResult,
    StartGate, TaskSpan,
};
use crate::graph::TaskGraph;

const NO_ABORT: usize = usize::MAX;

#[derive(Default)]
struct WorkerStats {
    tasks: usize,
    edges: usize,
    spans: Vec<TaskSpan>,
}

/// Columns `[lo, hi)` owned by `worker` under balanced blocking.
pub(super) fn block_range(worker: usize, width: usize, workers: usize) -> (usize, usize) {
    let lo = (worker * width).div_ceil(workers);
    let hi = ((worker + 1) * width).div_ceil(workers);
    (lo, hi)
}

pub(super) fn run(graph: &TaskGraph, config: &BackendConfig) -> Result<RunResult, BackendError> {
    let workers = config.cores;
    let width = graph.width();
    let steps = graph.timesteps();
    let store: Vec<OnceLock<TaskOutput>> =
        (0..graph.total_tasks()).map(|_| OnceLock::new()).collect();
    let barrier = Barrier::new(workers);
    let gate = StartGate::new();
    let deadline = Deadline::new(config.watchdog.limit(graph, workers));
    // First timestep at which every worker stops; set only by worker 0.
    let abort_at = AtomicUsize::new(NO_ABORT);
    let end: OnceLock<Instant> = OnceLock::new();

    let outcome = thread::scope(|s| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let builder = config
                .scheduler
                .worker_stack
                .apply(thread::Builder::new().name(format!("fork-join-{w}")));
            let (store, barrier, gate, deadline, abort_at, end) =
                (&store, &barrier, &gate, &deadline, &abort_at, &end);
            let trace = config.trace;
            let spawned = builder.spawn_scoped(s, move || {
                let mut stats = WorkerStats::default();
                if !gate.arrive_and_wait() {
                    return stats;
                }
                let origin = deadline.origin();
                let (lo, hi) = block_range(w, width, workers);
                for t in 0..steps {
                    for i in lo..hi {
                        let start_ns = if trace { nanos_since(origin) } else { 0 };
                        let deps = graph.deps_unchecked(t, i);
                        stats.edges += deps.len();
                        let base = t.wrapping_sub(1).wrapping_mul(width);
                        let out = execute_task(
                            graph,
                            t,
                            i,
                            deps.map(|j| {
                                let input = store[base + j].get().expect("dependency finished");
                                (input.checksum, &input.payload[..])
                            }),
                        );
                        let _ = store[t * width + i].set(out);
                        stats.tasks += 1;
                        if trace {
                            stats.spans.push(TaskSpan {
                                timestep: t,
                                index: i,
                                worker: w,
                                start_ns,
                                finish_ns: nanos_since(origin),
                            });
                        }
                    }
                    if w == 0 && deadline.expired() {
                        abort_at.store(t, Ordering::Relaxed);
                    }
                    let wait = barrier.wait();
                    if abort_at.load(Ordering::Relaxed) <= t {
                        break;
                    }
                    if t + 1 == steps && wait.is_leader() {
                        let _ = end.set(Instant::now());
                    }
                }
                stats
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
        deadline.start();
        gate.open();
        Ok(handles
            .into_iter()
            .map(|h| h.join().expect("fork-join worker panicked"))
            .collect::<Vec<_>>())
    })?;

    let origin = deadline.origin();
    let tasks: usize = outcome.iter().map(|s| s.tasks).sum();
    if abort_at.load(Ordering::Relaxed) != NO_ABORT || end.get().is_none() {
        return Err(BackendError::Deadlock {
            backend: BackendKind::ForkJoin,
            limit: deadline.limit(),
            outstanding: graph.total_tasks() - tasks,
            total: graph.total_tasks(),
        });
    }
    let wall_seconds = end
        .get()
        .map(|e| (*e - origin).as_secs_f64())
        .unwrap_or_default();
    let checksum = fold_run_checksum(store.iter().map(|o| o.get().expect("task ran").checksum));
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
