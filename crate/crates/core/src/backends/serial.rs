//! Reference executor. Defines the canonical dataflow checksum.

use std::time::Instant;

use super::dataflow::{execute_task, fold_run_checksum, TaskOutput};
use super::{nanos_since, BackendConfig, BackendError, BackendKind, RunResult, TaskSpan};
use crate::graph::TaskGraph;

pub(super) fn run(graph: &TaskGraph, config: &BackendConfig) -> Result<RunResult, BackendError> {
    let width = graph.width();
    let limit = config.watchdog.limit(graph, 1);
    let mut trace = config
        .trace
        .then(|| Vec::with_capacity(graph.total_tasks()));
    let mut prev: Vec<TaskOutput> = Vec::with_capacity(width);
    let mut cur: Vec<TaskOutput> = Vec::with_capacity(width);
    let mut checksums = Vec::with_capacity(graph.total_tasks());
    let mut edges = 0usize;

    let origin = Instant::now();
    for t in 0..graph.timesteps() {
        for i in 0..width {
            let start_ns = nanos_since(origin);
            let deps = graph.deps_unchecked(t, i);
            edges += deps.len();
            let out = execute_task(
                graph,
                t,
                i,
                deps.map(|j| (prev[j].checksum, &prev[j].payload[..])),
            );
            if let Some(trace) = trace.as_mut() {
                trace.push(TaskSpan {
                    timestep: t,
                    index: i,
                    worker: 0,
                    start_ns,
                    finish_ns: nanos_since(origin),
                });
            }
            checksums.push(out.checksum);
            cur.push(out);
        }
        std::mem::swap(&mut prev, &mut cur);
        cur.clear();
        if origin.elapsed() > limit {
            return Err(BackendError::Deadlock {
                backend: BackendKind::Serial,
                limit,
                outstanding: graph.total_tasks() - checksums.len(),
                total: graph.total_tasks(),
            });
        }
    }
    let wall_seconds = origin.elapsed().as_secs_f64();

    Ok(RunResult {
        wall_seconds,
        tasks_executed: checksums.len(),
        edges_satisfied: edges,
        dataflow_checksum: fold_run_checksum(checksums),
        flops_executed: graph.kernel().flops_per_task() * graph.total_tasks() as u64,
        trace,
    })
}
