//! Task graphs: a `timesteps × width` lattice of tasks whose edges run only
//! from timestep `t - 1` to timestep `t`, shaped by a [`PatternKind`].
//!
//! Dependence sets are never materialized. Every query is answered from the
//! closed-form pattern rule, so a graph costs O(1) memory regardless of size.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("invalid graph spec: {0}")]
    InvalidSpec(String),
    #[error("task point (t={timestep}, i={index}) is outside the graph")]
    OutOfRange { timestep: usize, index: usize },
    #[error("unknown pattern `{0}`")]
    UnknownPattern(String),
}

/// Dependency pattern between consecutive timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PatternKind {
    Trivial,
    NoComm,
    Stencil1d,
    Stencil1dPeriodic,
    Fft,
    Tree,
    Nearest { radius: usize },
    AllToAll,
}

impl PatternKind {
    /// One representative of every pattern family (nearest with radius 2).
    pub const ALL: [PatternKind; 8] = [
        PatternKind::Trivial,
        PatternKind::NoComm,
        PatternKind::Stencil1d,
        PatternKind::Stencil1dPeriodic,
        PatternKind::Fft,
        PatternKind::Tree,
        PatternKind::Nearest { radius: 2 },
        PatternKind::AllToAll,
    ];
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternKind::Trivial => f.write_str("trivial"),
            PatternKind::NoComm => f.write_str("no_comm"),
            PatternKind::Stencil1d => f.write_str("stencil_1d"),
            PatternKind::Stencil1dPeriodic => f.write_str("stencil_1d_periodic"),
            PatternKind::Fft => f.write_str("fft"),
            PatternKind::Tree => f.write_str("tree"),
            PatternKind::Nearest { radius } => write!(f, "nearest:{radius}"),
            PatternKind::AllToAll => f.write_str("all_to_all"),
        }
    }
}

impl FromStr for PatternKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let pattern = match s {
            "trivial" => PatternKind::Trivial,
            "no_comm" => PatternKind::NoComm,
            "stencil_1d" => PatternKind::Stencil1d,
            "stencil_1d_periodic" => PatternKind::Stencil1dPeriodic,
            "fft" => PatternKind::Fft,
            "tree" => PatternKind::Tree,
            "all_to_all" => PatternKind::AllToAll,
            other => {
                let radius = other
                    .strip_prefix("nearest:")
                    .and_then(|r| r.parse::<usize>().ok())
                    .filter(|&r| r >= 1)
                    .ok_or_else(|| GraphError::UnknownPattern(other.to_string()))?;
                PatternKind::Nearest { radius }
            }
        };
        Ok(pattern)
    }
}

impl TryFrom<String> for PatternKind {
    type Error = GraphError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<PatternKind> for String {
    fn from(value: PatternKind) -> Self {
        value.to_string()
    }
}

/// Parameters of one benchmark graph instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub width: usize,
    pub timesteps: usize,
    pub pattern: PatternKind,
    /// Payload bytes carried along every dependence edge.
    pub output_bytes: usize,
    pub kernel: KernelConfig,
}

impl GraphSpec {
    pub fn new(width: usize, timesteps: usize, pattern: PatternKind) -> Self {
        GraphSpec {
            width,
            timesteps,
            pattern,
            output_bytes: 0,
            kernel: KernelConfig::empty(),
        }
    }

    pub fn with_kernel(mut self, kernel: KernelConfig) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_output_bytes(mut self, output_bytes: usize) -> Self {
        self.output_bytes = output_bytes;
        self
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.width == 0 {
            return Err(GraphError::InvalidSpec("width must be at least 1".into()));
        }
        if self.timesteps == 0 {
            return Err(GraphError::InvalidSpec(
                "timesteps must be at least 1".into(),
            ));
        }
        if self.pattern == PatternKind::Fft && !self.width.is_power_of_two() {
            return Err(GraphError::InvalidSpec(format!(
                "fft pattern needs a power-of-two width, got {}",
                self.width
            )));
        }
        if let PatternKind::Nearest { radius: 0 } = self.pattern {
            return Err(GraphError::InvalidSpec(
                "nearest radius must be at least 1".into(),
            ));
        }
        if self.width.checked_mul(self.timesteps).is_none() {
            return Err(GraphError::InvalidSpec(
                "width × timesteps overflows".into(),
            ));
        }
        Ok(())
    }
}

/// A vertex of the task graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskPoint {
    pub timestep: usize,
    pub index: usize,
}

impl TaskPoint {
    pub fn new(timestep: usize, index: usize) -> Self {
        TaskPoint { timestep, index }
    }
}

/// Sorted, duplicate-free set of indices at an adjacent timestep.
///
/// Yields indices without allocating: patterns produce either a contiguous
/// range or at most three scattered points.
#[derive(Debug, Clone)]
pub enum Deps {
    Range(Range<usize>),
    Few { buf: [usize; 3], len: u8, pos: u8 },
}

impl Deps {
    fn empty() -> Self {
        Deps::Range(0..0)
    }

    fn from_unsorted(mut buf: [usize; 3], len: usize) -> Self {
        let slice = &mut buf[..len];
        slice.sort_unstable();
        let mut out = 0;
        for k in 0..len {
            if out == 0 || buf[out - 1] != buf[k] {
                buf[out] = buf[k];
                out += 1;
            }
        }
        Deps::Few {
            buf,
            len: out as u8,
            pos: 0,
        }
    }

    pub fn contains(&self, index: usize) -> bool {
        match self {
            Deps::Range(r) => r.contains(&index),
            Deps::Few { buf, len, pos } => buf[*pos as usize..*len as usize].contains(&index),
        }
    }
}

impl Iterator for Deps {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            Deps::Range(r) => r.next(),
            Deps::Few { buf, len, pos } => {
                if pos < len {
                    let v = buf[*pos as usize];
                    *pos += 1;
                    Some(v)
                } else {
                    None
                }
            }
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = match self {
            Deps::Range(r) => r.len(),
            Deps::Few { len, pos, .. } => (*len - *pos) as usize,
        };
        (n, Some(n))
    }
}

impl ExactSizeIterator for Deps {}

/// An immutable, validated task graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    spec: GraphSpec,
    log2_width: u32,
    ceil_log2_width: u32,
}

/// Validates `spec` and builds its graph.
pub fn build_graph(spec: GraphSpec) -> Result<TaskGraph, GraphError> {
    TaskGraph::new(spec)
}

impl TaskGraph {
    pub fn new(spec: GraphSpec) -> Result<Self, GraphError> {
        spec.validate()?;
        let log2_width = usize::BITS - 1 - spec.width.leading_zeros();
        let ceil_log2_width = spec.width.next_power_of_two().trailing_zeros();
        Ok(TaskGraph {
            spec,
            log2_width,
            ceil_log2_width,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn timesteps(&self) -> usize {
        self.spec.timesteps
    }

    pub fn pattern(&self) -> PatternKind {
        self.spec.pattern
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.spec.kernel
    }

    pub fn output_bytes(&self) -> usize {
        self.spec.output_bytes
    }

    pub fn total_tasks(&self) -> usize {
        self.spec.width * self.spec.timesteps
    }

    pub fn total_edges(&self) -> usize {
        (1..self.spec.timesteps)
            .map(|t| {
                (0..self.spec.width)
                    .map(|i| self.deps_unchecked(t, i).len())
                    .sum::<usize>()
            })
            .sum()
    }

    /// Dense id of a task, `t * width + i`.
    pub fn task_id(&self, timestep: usize, index: usize) -> usize {
        timestep * self.spec.width + index
    }

    pub fn task_point(&self, id: usize) -> TaskPoint {
        TaskPoint::new(id / self.spec.width, id % self.spec.width)
    }

    fn check(&self, timestep: usize, index: usize) -> Result<(), GraphError> {
        if timestep >= self.spec.timesteps || index >= self.spec.width {
            Err(GraphError::OutOfRange { timestep, index })
        } else {
            Ok(())
        }
    }

    /// Indices at `t - 1` that task `(t, i)` depends on.
    pub fn dependencies(&self, timestep: usize, index: usize) -> Result<Deps, GraphError> {
        self.check(timestep, index)?;
        Ok(self.deps_unchecked(timestep, index))
    }

    /// Indices at `t + 1` that depend on task `(t, i)`. Empty at the last timestep.
    pub fn reverse_dependencies(&self, timestep: usize, index: usize) -> Result<Deps, GraphError> {
        self.check(timestep, index)?;
        Ok(self.reverse_deps_unchecked(timestep, index))
    }

    pub(crate) fn deps_unchecked(&self, t: usize, i: usize) -> Deps {
        if t == 0 {
            return Deps::empty();
        }
        self.relation(t, i)
    }

    pub(crate) fn reverse_deps_unchecked(&self, t: usize, i: usize) -> Deps {
        if t + 1 >= self.spec.timesteps {
            return Deps::empty();
        }
        // Every pattern relation is symmetric within a transition: j at t+1
        // depends on i exactly when i at t+1 would depend on j.
        self.relation(t + 1, i)
    }

    /// Pattern relation for the transition `t - 1 -> t`, `t >= 1`.
    fn relation(&self, t: usize, i: usize) -> Deps {
        let width = self.spec.width;
        match self.spec.pattern {
            PatternKind::Trivial => Deps::empty(),
            PatternKind::NoComm => Deps::Few {
                buf: [i, 0, 0],
                len: 1,
                pos: 0,
            },
            PatternKind::Stencil1d => Deps::Range(i.saturating_sub(1)..(i + 2).min(width)),
            PatternKind::Nearest { radius } => {
                Deps::Range(i.saturating_sub(radius)..(i + radius + 1).min(width))
            }
            PatternKind::Stencil1dPeriodic => {
                let left = (i + width - 1) % width;
                let right = (i + 1) % width;
                Deps::from_unsorted([left, i, right], 3)
            }
            PatternKind::Fft => {
                if self.log2_width == 0 {
                    return Deps::from_unsorted([i, 0, 0], 1);
                }
                let stage = (t - 1) as u32 % self.log2_width;
                Deps::from_unsorted([i, i ^ (1 << stage), 0], 2)
            }
            PatternKind::Tree => {
                let exponent = t - 1;
                if exponent < self.ceil_log2_width as usize {
                    let partner = i ^ (1 << exponent);
                    if partner < width {
                        return Deps::from_unsorted([i, partner, 0], 2);
                    }
                }
                Deps::from_unsorted([i, 0, 0], 1)
            }
            PatternKind::AllToAll => Deps::Range(0..width),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(width: usize, timesteps: usize, pattern: PatternKind) -> TaskGraph {
        build_graph(GraphSpec::new(width, timesteps, pattern)).unwrap()
    }

    fn deps(g: &TaskGraph, t: usize, i: usize) -> Vec<usize> {
        g.dependencies(t, i).unwrap().collect()
    }

    #[test]
    fn large_stencil_has_48000_tasks() {
        let g = graph(48, 1000, PatternKind::Stencil1d);
        assert_eq!(g.total_tasks(), 48_000);
    }

    #[test]
    fn minimal_graph() {
        let g = graph(1, 1, PatternKind::Trivial);
        assert_eq!(g.total_tasks(), 1);
        assert_eq!(g.total_edges(), 0);
        assert!(deps(&g, 0, 0).is_empty());
    }

    #[test]
    fn rejects_invalid_specs() {
        for spec in [
            GraphSpec::new(6, 2, PatternKind::Fft),
            GraphSpec::new(0, 2, PatternKind::Stencil1d),
            GraphSpec::new(4, 0, PatternKind::Stencil1d),
            GraphSpec::new(4, 2, PatternKind::Nearest { radius: 0 }),
        ] {
            assert!(matches!(build_graph(spec), Err(GraphError::InvalidSpec(_))));
        }
    }

    #[test]
    fn stencil_examples() {
        let g = graph(8, 4, PatternKind::Stencil1d);
        assert_eq!(deps(&g, 1, 5), vec![4, 5, 6]);
        assert_eq!(deps(&g, 1, 0), vec![0, 1]);
        assert_eq!(deps(&g, 1, 7), vec![6, 7]);
        let rev: Vec<_> = g.reverse_dependencies(0, 0).unwrap().collect();
        assert_eq!(rev, vec![0, 1]);
    }

    #[test]
    fn first_timestep_has_no_dependencies() {
        for pattern in PatternKind::ALL {
            let g = graph(8, 3, pattern);
            for i in 0..8 {
                assert!(deps(&g, 0, i).is_empty(), "{pattern}");
            }
        }
    }

    #[test]
    fn fft_butterfly() {
        let g = graph(8, 8, PatternKind::Fft);
        assert_eq!(deps(&g, 1, 0), vec![0, 1]);
        assert_eq!(deps(&g, 2, 0), vec![0, 2]);
        assert_eq!(deps(&g, 3, 0), vec![0, 4]);
        // stage wraps after log2(width) steps
        assert_eq!(deps(&g, 4, 5), vec![4, 5]);
    }

    #[test]
    fn tree_falls_back_to_self_after_log_steps() {
        let g = graph(6, 6, PatternKind::Tree);
        assert_eq!(deps(&g, 1, 2), vec![2, 3]);
        assert_eq!(deps(&g, 3, 1), vec![1, 5]);
        // partner 6 is outside width 6
        assert_eq!(deps(&g, 3, 2), vec![2]);
        assert_eq!(deps(&g, 4, 2), vec![2]);
    }

    #[test]
    fn all_to_all_reverse() {
        let g = graph(4, 2, PatternKind::AllToAll);
        let rev: Vec<_> = g.reverse_dependencies(0, 2).unwrap().collect();
        assert_eq!(rev, vec![0, 1, 2, 3]);
    }

    #[test]
    fn trivial_has_no_reverse_edges() {
        let g = graph(4, 3, PatternKind::Trivial);
        assert_eq!(g.reverse_dependencies(1, 2).unwrap().count(), 0);
    }

    #[test]
    fn periodic_stencil_edge_count() {
        assert_eq!(
            graph(4, 3, PatternKind::Stencil1dPeriodic).total_edges(),
            24
        );
    }

    #[test]
    fn periodic_dedups_on_tiny_widths() {
        let g = graph(2, 2, PatternKind::Stencil1dPeriodic);
        assert_eq!(deps(&g, 1, 0), vec![0, 1]);
        let g = graph(1, 2, PatternKind::Stencil1dPeriodic);
        assert_eq!(deps(&g, 1, 0), vec![0]);
    }

    #[test]
    fn out_of_range_queries() {
        let g = graph(4, 3, PatternKind::Stencil1d);
        assert_eq!(
            g.dependencies(3, 0).unwrap_err(),
            GraphError::OutOfRange {
                timestep: 3,
                index: 0
            }
        );
        assert!(g.reverse_dependencies(0, 4).is_err());
    }

    #[test]
    fn pattern_names_round_trip() {
        for pattern in PatternKind::ALL {
            assert_eq!(pattern.to_string().parse::<PatternKind>().unwrap(), pattern);
        }
        assert!("nearest:0".parse::<PatternKind>().is_err());
        assert!("spread".parse::<PatternKind>().is_err());
    }
}
