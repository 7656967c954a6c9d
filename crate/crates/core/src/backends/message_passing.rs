//! Rank executor.
//!
//! `cores` ranks each own a contiguous block of columns and keep their task
//! outputs private. Each timestep a rank first receives every remote input
//! it needs, then executes its columns, then sends each output along the
//! cross-rank edges of the next timestep. Intra-rank edges bypass the
//! transport.
//!
//! Edge ids identify the consumer and producer: `(t * width + dst) * width + src`,
//! where `t` is the consumer's timestep. A message body is the producer's
//! checksum (u64, little-endian) followed by its payload.

use std::collections::HashMap;
use std::hint::black_box;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::thread;
use std::time::Instant;

use crossbeam_utils::Backoff;

use super::dataflow::{execute_task, fold_run_checksum, TaskOutput};
use super::queue::ReadyQueue;
use super::transport::{self, Endpoint, Frame};
use super::{
    nanos_since, spawn_error, BackendConfig, BackendError, BackendKind, Deadline, PriorityMode,
    RunResult, StartGate, TaskSpan,
};
use crate::graph::TaskGraph;

struct Shared {
    deadline: Deadline,
    remaining: AtomicUsize,
    in_flight: AtomicUsize,
    end: OnceLock<Instant>,
    /// Rank whose error started the shutdown; peers' errors are fallout.
    first_failure: OnceLock<usize>,
}

struct RankOutput {
    /// Checksums of owned tasks, row-major over (timestep, local column).
    checksums: Vec<u64>,
    tasks: usize,
    edges: usize,
    spans: Vec<TaskSpan>,
}

/// Received-but-unconsumed messages, optionally staged through a
/// priority-ordered scheduler queue before delivery.
struct Mailbox {
    delivered: HashMap<u32, Vec<u8>>,
    staged: HashMap<u32, Vec<u8>>,
    order: Option<ReadyQueue>,
    edges_per_step: u64,
}

impl Mailbox {
    fn new(mode: PriorityMode, edges_per_step: u64) -> Self {
        Mailbox {
            delivered: HashMap::new(),
            staged: HashMap::new(),
            order: (mode != PriorityMode::None).then(|| ReadyQueue::new(mode)),
            edges_per_step,
        }
    }

    fn accept(&mut self, frame: Frame) {
        match &self.order {
            None => {
                self.delivered.insert(frame.edge, frame.body);
            }
            Some(queue) => {
                let timestep = (frame.edge as u64 / self.edges_per_step) as usize;
                queue.push(frame.edge, timestep);
                self.staged.insert(frame.edge, frame.body);
            }
        }
    }

    /// Moves one staged message to the delivered set; false if none staged.
    fn deliver_one(&mut self) -> bool {
        let Some(queue) = &self.order else {
            return false;
        };
        match queue.pop() {
            Some(edge) => {
                let body = self.staged.remove(&edge).expect("staged body");
                self.delivered.insert(edge, body);
                true
            }
            None => false,
        }
    }
}

struct Rank<'a> {
    id: usize,
    graph: &'a TaskGraph,
    shards: usize,
    endpoint: Box<dyn Endpoint>,
    mailbox: Mailbox,
    shared: &'a Shared,
    idle_detection: bool,
    trace: bool,
}

impl Rank<'_> {
    fn owner(&self, index: usize) -> usize {
        index / self.shards
    }

    fn edge_id(&self, timestep: usize, dst: usize, src: usize) -> u32 {
        let width = self.graph.width();
        ((timestep * width + dst) * width + src) as u32
    }

    /// Records this rank as the origin of a failure (if none is yet) and
    /// stops the other ranks.
    fn fail(&self, error: BackendError) -> BackendError {
        let _ = self.shared.first_failure.set(self.id);
        self.shared.deadline.abort();
        error
    }

    fn transport_error(&self, e: std::io::Error) -> BackendError {
        self.fail(BackendError::Transport(e))
    }

    /// One scheduling iteration: pull what arrived, deliver one staged message.
    fn pump(&mut self) -> Result<bool, BackendError> {
        let mut progressed = false;
        while let Some(frame) = self
            .endpoint
            .try_recv()
            .map_err(|e| self.transport_error(e))?
        {
            self.shared.in_flight.fetch_sub(1, Ordering::AcqRel);
            self.mailbox.accept(frame);
            progressed = true;
        }
        progressed |= self.mailbox.deliver_one();
        if self.idle_detection {
            // quiescence poll: no messages in flight and no work left
            black_box(
                self.shared.in_flight.load(Ordering::Acquire) == 0
                    && self.shared.remaining.load(Ordering::Acquire) == 0,
            );
        }
        Ok(progressed)
    }

    fn deadlock(&self, done: usize) -> BackendError {
        self.fail(BackendError::Deadlock {
            backend: BackendKind::MessagePassing,
            limit: self.shared.deadline.limit(),
            outstanding: self.graph.total_tasks().saturating_sub(done),
            total: self.graph.total_tasks(),
        })
    }

    fn wait_for(&mut self, edge: u32, done: usize) -> Result<(), BackendError> {
        let backoff = Backoff::new();
        while !self.mailbox.delivered.contains_key(&edge) {
            if self.pump()? {
                backoff.reset();
                continue;
            }
            if self.shared.deadline.expired() {
                return Err(self.deadlock(done));
            }
            backoff.snooze();
        }
        Ok(())
    }

    fn run(mut self) -> Result<RankOutput, BackendError> {
        let graph = self.graph;
        let steps = graph.timesteps();
        let lo = self.id * self.shards;
        let hi = lo + self.shards;
        let origin = self.shared.deadline.origin();
        let mut out = RankOutput {
            checksums: Vec::with_capacity(self.shards * steps),
            tasks: 0,
            edges: 0,
            spans: Vec::new(),
        };
        let mut prev: Vec<TaskOutput> = Vec::with_capacity(self.shards);
        let mut cur: Vec<TaskOutput> = Vec::with_capacity(self.shards);
        let mut body = Vec::new();

        for t in 0..steps {
            // receive
            for i in lo..hi {
                for j in graph.deps_unchecked(t, i) {
                    if self.owner(j) != self.id {
                        let edge = self.edge_id(t, i, j);
                        self.wait_for(edge, out.tasks)?;
                    }
                }
            }
            // execute
            for i in lo..hi {
                let start_ns = if self.trace { nanos_since(origin) } else { 0 };
                let deps = graph.deps_unchecked(t, i);
                out.edges += deps.len();
                let id = self.id;
                let shards = self.shards;
                let remote: Vec<Vec<u8>> = deps
                    .clone()
                    .filter(|&j| j / shards != id)
                    .map(|j| {
                        let edge = self.edge_id(t, i, j);
                        self.mailbox.delivered.remove(&edge).expect("received")
                    })
                    .collect();
                let mut remote_iter = remote.iter();
                let output = execute_task(
                    graph,
                    t,
                    i,
                    deps.map(|j| {
                        if j / shards == id {
                            let input = &prev[j - lo];
                            (input.checksum, &input.payload[..])
                        } else {
                            let msg = remote_iter.next().expect("remote input");
                            let checksum = u64::from_le_bytes(msg[..8].try_into().unwrap());
                            (checksum, &msg[8..])
                        }
                    }),
                );
                out.checksums.push(output.checksum);
                out.tasks += 1;
                if self.trace {
                    out.spans.push(TaskSpan {
                        timestep: t,
                        index: i,
                        worker: self.id,
                        start_ns,
                        finish_ns: nanos_since(origin),
                    });
                }
                cur.push(output);
            }
            // send
            if t + 1 < steps {
                for i in lo..hi {
                    let output = &cur[i - lo];
                    for j in graph.reverse_deps_unchecked(t, i) {
                        let dest = self.owner(j);
                        if dest == self.id {
                            continue;
                        }
                        body.clear();
                        body.extend_from_slice(&output.checksum.to_le_bytes());
                        body.extend_from_slice(&output.payload);
                        let edge = self.edge_id(t + 1, j, i);
                        self.shared.in_flight.fetch_add(1, Ordering::AcqRel);
                        if let Err(e) = self.endpoint.send(dest, edge, &body) {
                            return Err(self.transport_error(e));
                        }
                    }
                }
            }
            std::mem::swap(&mut prev, &mut cur);
            cur.clear();
            if self.shared.deadline.aborted() {
                return Err(self.deadlock(out.tasks));
            }
        }

        if self.shared.remaining.fetch_sub(out.tasks, Ordering::AcqRel) == out.tasks {
            let _ = self.shared.end.set(Instant::now());
        }
        Ok(out)
    }
}

pub(super) fn run(graph: &TaskGraph, config: &BackendConfig) -> Result<RunResult, BackendError> {
    let ranks = config.cores;
    let width = graph.width();
    if width % ranks != 0 {
        return Err(BackendError::ConfigMismatch(format!(
            "message_passing needs width {width} divisible by {ranks} ranks"
        )));
    }
    let edge_space = (width as u64) * (width as u64) * graph.timesteps() as u64;
    if edge_space > u32::MAX as u64 {
        return Err(BackendError::ConfigMismatch(format!(
            "width² × timesteps = {edge_space} exceeds the u32 edge id space"
        )));
    }
    let shards = width / ranks;
    let endpoints =
        transport::connect(config.transport.medium, ranks).map_err(BackendError::Transport)?;
    let shared = Shared {
        deadline: Deadline::new(config.watchdog.limit(graph, ranks)),
        remaining: AtomicUsize::new(graph.total_tasks()),
        in_flight: AtomicUsize::new(0),
        end: OnceLock::new(),
        first_failure: OnceLock::new(),
    };
    let gate = StartGate::new();
    let edges_per_step = (width * width) as u64;

    let outcome = thread::scope(|s| {
        let mut handles = Vec::with_capacity(ranks);
        for (id, endpoint) in endpoints.into_iter().enumerate() {
            let rank = Rank {
                id,
                graph,
                shards,
                endpoint,
                mailbox: Mailbox::new(config.scheduler.priority_mode, edges_per_step),
                shared: &shared,
                idle_detection: config.scheduler.idle_detection,
                trace: config.trace,
            };
            let gate = &gate;
            let builder = config
                .scheduler
                .worker_stack
                .apply(thread::Builder::new().name(format!("rank-{id}")));
            let spawned = builder.spawn_scoped(s, move || {
                if !gate.arrive_and_wait() {
                    return None;
                }
                Some(rank.run())
            });
            match spawned {
                Ok(h) => handles.push(h),
                Err(e) => {
                    gate.abort();
                    return Err(spawn_error(e));
                }
            }
        }
        gate.wait_for(ranks);
        shared.deadline.start();
        gate.open();
        Ok(handles
            .into_iter()
            .map(|h| h.join().expect("rank panicked"))
            .collect::<Vec<_>>())
    })?;

    let mut outputs = Vec::with_capacity(ranks);
    let mut errors: Vec<(usize, BackendError)> = Vec::new();
    for (id, result) in outcome.into_iter().enumerate() {
        match result {
            Some(Ok(out)) => outputs.push(out),
            Some(Err(e)) => errors.push((id, e)),
            None => {}
        }
    }
    if !errors.is_empty() {
        let culprit = shared.first_failure.get().copied();
        let pick = errors
            .iter()
            .position(|(id, _)| Some(*id) == culprit)
            .unwrap_or(0);
        return Err(errors.swap_remove(pick).1);
    }
    let end = shared.end.get().copied().ok_or(BackendError::Deadlock {
        backend: BackendKind::MessagePassing,
        limit: shared.deadline.limit(),
        outstanding: shared.remaining.load(Ordering::Acquire),
        total: graph.total_tasks(),
    })?;
    let wall_seconds = (end - shared.deadline.origin()).as_secs_f64();

    let checksum = fold_run_checksum((0..graph.timesteps()).flat_map(|t| {
        let outputs = &outputs;
        (0..width).map(move |i| outputs[i / shards].checksums[t * shards + i % shards])
    }));
    let tasks: usize = outputs.iter().map(|o| o.tasks).sum();
    let trace = config.trace.then(|| {
        outputs
            .iter()
            .flat_map(|o| o.spans.iter().copied())
            .collect()
    });
    Ok(RunResult {
        wall_seconds,
        tasks_executed: tasks,
        edges_satisfied: outputs.iter().map(|o| o.edges).sum(),
        dataflow_checksum: checksum,
        flops_executed: graph.kernel().flops_per_task() * tasks as u64,
        trace,
    })
}
