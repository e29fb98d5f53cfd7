use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DependencyGraph;
use crate::error::{Result, SarError};

/// A topological generation order with its source rows.
///
/// Target `order[i]` is read from decoder row `source[order[i]] = order[i - 1]`
/// (row 0 for the first target). `deps` always contains the source row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub n_positions: usize,
    pub order: Vec<usize>,
    pub source: BTreeMap<usize, usize>,
    pub deps: BTreeMap<usize, BTreeSet<usize>>,
    pub levels: Vec<Vec<usize>>,
    /// Whether a full-visibility smoothing pass follows the chain.
    pub smoothing: bool,
}

/// Orders the graph with Kahn's algorithm (smallest ready position first),
/// chains the source rows and partitions the order into levels.
pub fn topological_schedule(g: &DependencyGraph) -> Result<Schedule> {
    let order = g
        .kahn_order()
        .map_err(|_| SarError::Cycle(g.validate_dag().expect_err("kahn failed")))?;
    let mut source = BTreeMap::new();
    let mut deps = BTreeMap::new();
    let mut prev = 0;
    for &t in &order {
        source.insert(t, prev);
        let mut ds = g.deps()[&t].clone();
        ds.insert(prev);
        deps.insert(t, ds);
        prev = t;
    }
    let levels = partition_levels(g.n_positions(), &order, &source, &deps);
    Ok(Schedule {
        n_positions: g.n_positions(),
        order,
        source,
        deps,
        levels,
        smoothing: g.has_smoothing(),
    })
}

/// Greedy maximal consecutive groups: a target joins the current group when
/// all its dependencies were valid before the group started and its source
/// row is not already used in the group.
fn partition_levels(
    n: usize,
    order: &[usize],
    source: &BTreeMap<usize, usize>,
    deps: &BTreeMap<usize, BTreeSet<usize>>,
) -> Vec<Vec<usize>> {
    let mut valid: BTreeSet<usize> = BTreeSet::from([0, n - 1]);
    let mut levels: Vec<Vec<usize>> = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    let mut used_sources: BTreeSet<usize> = BTreeSet::new();
    for &t in order {
        let fits = deps[&t].is_subset(&valid) && !used_sources.contains(&source[&t]);
        if !fits && !group.is_empty() {
            valid.extend(group.iter().copied());
            levels.push(std::mem::take(&mut group));
            used_sources.clear();
        }
        group.push(t);
        used_sources.insert(source[&t]);
    }
    if !group.is_empty() {
        levels.push(group);
    }
    levels
}

impl Schedule {
    pub fn interior(&self) -> usize {
        self.n_positions - 2
    }

    /// Rows whose outputs are read during the chain, in order.
    pub fn source_rows(&self) -> Vec<usize> {
        self.order.iter().map(|t| self.source[t]).collect()
    }

    /// Checks every invariant that `topological_schedule` establishes.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_positions;
        if n < 3 {
            return Err(SarError::EmptyGraph);
        }
        let fail = |m: String| Err(SarError::invalid(format!("schedule: {m}")));
        let keys: BTreeSet<usize> = self.order.iter().copied().collect();
        if keys.len() != self.order.len() {
            return fail("order repeats a position".into());
        }
        if keys != self.deps.keys().copied().collect() || keys != self.source.keys().copied().collect() {
            return fail("order, source and deps cover different targets".into());
        }
        let mut valid: BTreeSet<usize> = BTreeSet::from([0, n - 1]);
        let mut prev = 0;
        for &t in &self.order {
            if t == 0 || t >= n - 1 {
                return fail(format!("target {t} is not interior"));
            }
            if self.source[&t] != prev {
                return fail(format!("source of {t} is {}, expected {prev}", self.source[&t]));
            }
            let ds = &self.deps[&t];
            if !ds.contains(&prev) {
                return fail(format!("deps of {t} omit its source row {prev}"));
            }
            if let Some(d) = ds.iter().find(|d| !valid.contains(d)) {
                return fail(format!("{t} depends on {d}, which is not generated before it"));
            }
            valid.insert(t);
            prev = t;
        }
        let flat: Vec<usize> = self.levels.iter().flatten().copied().collect();
        if flat != self.order {
            return fail("levels do not partition the order".into());
        }
        let expected = partition_levels(n, &self.order, &self.source, &self.deps);
        if expected != self.levels {
            return fail("levels violate the level rule".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Schedule = serde_json::from_str(text).map_err(|e| SarError::Parse {
            context: "schedule".into(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| SarError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SarError::io(path, e))?;
        Schedule::from_json(&text).map_err(|e| match e {
            SarError::Parse { message, .. } => SarError::Parse {
                context: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}
