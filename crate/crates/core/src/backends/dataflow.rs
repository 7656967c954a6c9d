//! Canonical dataflow: how a task's seed is formed from its inputs and how
//! per-task checksums fold into the run checksum. Shared by all backends.

use crate::graph::TaskGraph;
use crate::kernel::execute_kernel;
use crate::mix64;

const TASK_ROOT: u64 = 0x7A5C_0FFE_E000_0001;
const RUN_ROOT: u64 = 0x7A5C_0FFE_E000_0002;

/// Output of one task: its kernel checksum and the payload it sends along
/// every outgoing edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskOutput {
    pub checksum: u64,
    pub payload: Box<[u8]>,
}

impl TaskOutput {
    pub fn new(checksum: u64, output_bytes: usize) -> Self {
        let word = checksum.to_le_bytes();
        let payload = (0..output_bytes).map(|k| word[k % 8]).collect();
        TaskOutput { checksum, payload }
    }
}

/// FNV-1a over the payload bytes.
pub fn payload_digest(payload: &[u8]) -> u64 {
    payload.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Kernel seed of task `(t, i)` given its inputs in ascending index order.
pub fn task_seed<'a>(
    timestep: usize,
    index: usize,
    inputs: impl IntoIterator<Item = (u64, &'a [u8])>,
) -> u64 {
    let mut h = mix64(TASK_ROOT ^ ((timestep as u64) << 32) ^ index as u64);
    for (checksum, payload) in inputs {
        h = mix64(h ^ checksum);
        h = mix64(h ^ payload_digest(payload));
    }
    h
}

/// Folds per-task checksums, given in task order `(t, i)`, into the run checksum.
pub fn fold_run_checksum(checksums: impl IntoIterator<Item = u64>) -> u64 {
    checksums.into_iter().fold(RUN_ROOT, |h, c| mix64(h ^ c))
}

pub(crate) fn execute_task<'a>(
    graph: &TaskGraph,
    timestep: usize,
    index: usize,
    inputs: impl IntoIterator<Item = (u64, &'a [u8])>,
) -> TaskOutput {
    let seed = task_seed(timestep, index, inputs);
    let checksum = execute_kernel(graph.kernel(), seed);
    TaskOutput::new(checksum, graph.output_bytes())
}
