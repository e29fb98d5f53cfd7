//! Frame dependency graphs, generation schedules and the attention masks
//! derived from them.
//!
//! Positions `0` and `T + 1` hold the given start and end frames; `1..=T` are
//! generated. An edge `target -> dep` means the target frame is conditioned
//! on the dependency frame.

mod builders;
mod dot;
mod fdam;
mod schedule;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SarError};

pub use builders::{
    bisection_tiers, build_binary_search, build_hierarchical, build_original_ar,
    build_three_stage, build_three_stage_with, Stage2Deps,
};
pub use dot::export_dot;
pub use fdam::{derive_fdam, BoolMatrix, Fdam};
pub use schedule::{topological_schedule, Schedule};

/// Positions of one cycle, starting at its smallest member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleReport(pub Vec<usize>);

impl fmt::Display for CycleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        write!(f, "[{}]", parts.join(" -> "))
    }
}

/// DAG of frame dependencies over `n_positions = T + 2` positions.
///
/// `duplicates` marks interior positions that are regenerated by the
/// smoothing pass; each duplicate depends on every position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    n_positions: usize,
    deps: BTreeMap<usize, BTreeSet<usize>>,
    duplicates: BTreeSet<usize>,
}

impl DependencyGraph {
    /// Builds a graph after checking positions are in range, the givens are
    /// never targets and every dependency is a given or a target.
    pub fn new(
        n_positions: usize,
        deps: BTreeMap<usize, BTreeSet<usize>>,
        duplicates: BTreeSet<usize>,
    ) -> Result<Self> {
        if n_positions < 3 {
            return Err(SarError::EmptyGraph);
        }
        let last = n_positions - 1;
        for (&t, ds) in &deps {
            if t == 0 || t >= last {
                return Err(SarError::invalid(format!(
                    "position {t} cannot be a generation target (interior is 1..={})",
                    last - 1
                )));
            }
            if let Some(&d) = ds.iter().find(|&&d| !(d == 0 || d == last || deps.contains_key(&d))) {
                return Err(SarError::invalid(format!(
                    "target {t} depends on position {d}, which is neither given nor generated"
                )));
            }
        }
        if let Some(&d) = duplicates.iter().find(|&&d| d == 0 || d >= last) {
            return Err(SarError::invalid(format!("duplicate {d} is not an interior position")));
        }
        Ok(DependencyGraph {
            n_positions,
            deps,
            duplicates,
        })
    }

    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    /// Number of interior frames `T`.
    pub fn interior(&self) -> usize {
        self.n_positions - 2
    }

    /// Position of the given end frame.
    pub fn end(&self) -> usize {
        self.n_positions - 1
    }

    pub fn deps(&self) -> &BTreeMap<usize, BTreeSet<usize>> {
        &self.deps
    }

    pub fn deps_of(&self, target: usize) -> Option<&BTreeSet<usize>> {
        self.deps.get(&target)
    }

    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.deps.keys().copied()
    }

    pub fn duplicates(&self) -> &BTreeSet<usize> {
        &self.duplicates
    }

    pub fn has_smoothing(&self) -> bool {
        !self.duplicates.is_empty()
    }

    pub fn is_given(&self, p: usize) -> bool {
        p == 0 || p == self.end()
    }

    /// Adds smoothing duplicates for every interior position.
    pub fn with_smoothing(mut self) -> Self {
        self.duplicates = (1..self.end()).collect();
        self
    }

    /// Kahn's algorithm over the non-duplicate targets. On failure the report
    /// lists one cycle.
    pub fn validate_dag(&self) -> std::result::Result<(), CycleReport> {
        match self.kahn_order() {
            Ok(_) => Ok(()),
            Err(remaining) => Err(self.find_cycle(&remaining)),
        }
    }

    /// Topological order with the smallest ready position taken first, or the
    /// set of positions that could not be consumed.
    pub(crate) fn kahn_order(&self) -> std::result::Result<Vec<usize>, BTreeSet<usize>> {
        let mut pending: BTreeMap<usize, usize> = BTreeMap::new();
        let mut dependents: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&t, ds) in &self.deps {
            let inner: Vec<usize> = ds.iter().copied().filter(|d| self.deps.contains_key(d)).collect();
            pending.insert(t, inner.len());
            for d in inner {
                dependents.entry(d).or_default().push(t);
            }
        }
        let mut ready: BTreeSet<usize> = pending.iter().filter(|(_, &c)| c == 0).map(|(&t, _)| t).collect();
        let mut order = Vec::with_capacity(self.deps.len());
        while let Some(t) = ready.pop_first() {
            order.push(t);
            for &u in dependents.get(&t).map(Vec::as_slice).unwrap_or(&[]) {
                let c = pending.get_mut(&u).expect("dependent is a target");
                *c -= 1;
                if *c == 0 {
                    ready.insert(u);
                }
            }
        }
        if order.len() == self.deps.len() {
            Ok(order)
        } else {
            let done: BTreeSet<usize> = order.into_iter().collect();
            Err(self.deps.keys().copied().filter(|t| !done.contains(t)).collect())
        }
    }

    // Every leftover node has a leftover dependency, so walking those edges
    // must revisit a node.
    fn find_cycle(&self, remaining: &BTreeSet<usize>) -> CycleReport {
        let start = *remaining.first().expect("nonempty remainder");
        let mut path = vec![start];
        let mut seen: BTreeMap<usize, usize> = BTreeMap::from([(start, 0)]);
        let mut cur = start;
        loop {
            let next = self.deps[&cur]
                .iter()
                .copied()
                .find(|d| remaining.contains(d))
                .expect("leftover node has a leftover dependency");
            if let Some(&i) = seen.get(&next) {
                let mut cycle = path[i..].to_vec();
                let min_at = cycle
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &p)| p)
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                cycle.rotate_left(min_at);
                return CycleReport(cycle);
            }
            seen.insert(next, path.len());
            path.push(next);
            cur = next;
        }
    }
}
