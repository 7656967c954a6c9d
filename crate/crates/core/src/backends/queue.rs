//! Per-worker ready queues for the work-stealing executor.
//!
//! Without priorities the queue is a deque: the owner pops the newest task,
//! thieves take the oldest. With priorities it is a heap keyed on the
//! task's timestep (earlier runs first), ties broken newest-first.

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::PriorityMode;

/// Arbitrary-length bit-string priority. Smaller strings run first.
///
/// A timestep is encoded as its bit length followed by its big-endian
/// digits, so lexicographic order on the words equals numeric order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct BitPriority {
    words: Vec<u32>,
}

impl BitPriority {
    pub fn from_value(value: u64) -> Self {
        let bits = u64::BITS - value.leading_zeros();
        let mut words = vec![bits];
        let hi = (value >> 32) as u32;
        if hi != 0 {
            words.push(hi);
        }
        words.push(value as u32);
        BitPriority { words }
    }

    pub fn bit_len(&self) -> u32 {
        self.words[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Key {
    Fixed(u64),
    Bits(BitPriority),
}

impl Key {
    fn cmp_key(&self, other: &Key) -> CmpOrdering {
        match (self, other) {
            (Key::Fixed(a), Key::Fixed(b)) => a.cmp(b),
            (Key::Bits(a), Key::Bits(b)) => a.cmp(b),
            // one queue never mixes key kinds
            (Key::Fixed(_), Key::Bits(_)) => CmpOrdering::Less,
            (Key::Bits(_), Key::Fixed(_)) => CmpOrdering::Greater,
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
struct Entry {
    key: Key,
    seq: u64,
    task: u32,
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        // BinaryHeap pops the maximum: smallest key first, then newest.
        other.key.cmp_key(&self.key).then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
enum Inner {
    Deque(VecDeque<u32>),
    Heap { heap: BinaryHeap<Entry>, seq: u64 },
}

#[derive(Debug)]
pub(crate) struct ReadyQueue {
    mode: PriorityMode,
    inner: Mutex<Inner>,
    len: AtomicUsize,
}

impl ReadyQueue {
    pub(crate) fn new(mode: PriorityMode) -> Self {
        let inner = match mode {
            PriorityMode::None => Inner::Deque(VecDeque::new()),
            _ => Inner::Heap {
                heap: BinaryHeap::new(),
                seq: 0,
            },
        };
        ReadyQueue {
            mode,
            inner: Mutex::new(inner),
            len: AtomicUsize::new(0),
        }
    }

    pub(crate) fn push(&self, task: u32, timestep: usize) {
        let key = match self.mode {
            PriorityMode::None => None,
            PriorityMode::Fixed64 => Some(Key::Fixed(timestep as u64)),
            PriorityMode::Bitvector => Some(Key::Bits(BitPriority::from_value(timestep as u64))),
        };
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        match (&mut *inner, key) {
            (Inner::Deque(d), _) => d.push_back(task),
            (Inner::Heap { heap, seq }, Some(key)) => {
                *seq += 1;
                heap.push(Entry {
                    key,
                    seq: *seq,
                    task,
                });
            }
            (Inner::Heap { .. }, None) => unreachable!("heap queue always has a key"),
        }
        self.len.fetch_add(1, Ordering::Release);
    }

    /// Owner side: newest first.
    pub(crate) fn pop(&self) -> Option<u32> {
        self.take(false)
    }

    /// Thief side: oldest first.
    pub(crate) fn steal(&self) -> Option<u32> {
        self.take(true)
    }

    fn take(&self, from_front: bool) -> Option<u32> {
        if self.len.load(Ordering::Acquire) == 0 {
            return None;
        }
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let task = match &mut *inner {
            Inner::Deque(d) if from_front => d.pop_front(),
            Inner::Deque(d) => d.pop_back(),
            Inner::Heap { heap, .. } => heap.pop().map(|e| e.task),
        };
        if task.is_some() {
            self.len.fetch_sub(1, Ordering::Release);
        }
        task
    }

    pub(crate) fn len(&self) -> usize {
        self.len.load(Ordering::Acquire)
    }
}
