use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::DependencyGraph;
use crate::error::{Result, SarError};

type Deps = BTreeMap<usize, BTreeSet<usize>>;

/// Which keyframes an interval frame sees during frame-by-frame generation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stage2Deps {
    /// Every keyframe.
    #[default]
    AllKeyframes,
    /// Only the two anchors bounding the frame's interval.
    IntervalBounds,
}

/// Left-to-right autoregression: frame `t` sees both givens and `1..t`.
pub fn build_original_ar(frames: usize) -> Result<DependencyGraph> {
    if frames == 0 {
        return Err(SarError::EmptyGraph);
    }
    let end = frames + 1;
    let deps = (1..=frames)
        .map(|t| (t, [0, end].into_iter().chain(1..t).collect()))
        .collect();
    DependencyGraph::new(frames + 2, deps, BTreeSet::new())
}

/// Breadth-first bisection tiers: tier `k` holds the midpoints generated at
/// recursion depth `k`, in generation order.
pub fn bisection_tiers(frames: usize) -> Vec<Vec<(usize, usize, usize)>> {
    let mut tiers: Vec<Vec<(usize, usize, usize)>> = Vec::new();
    let mut queue = VecDeque::from([(0usize, frames + 1, 0usize)]);
    while let Some((lo, hi, depth)) = queue.pop_front() {
        if hi - lo < 2 {
            continue;
        }
        let mid = (lo + hi) / 2;
        if tiers.len() <= depth {
            tiers.push(Vec::new());
        }
        tiers[depth].push((mid, lo, hi));
        queue.push_back((lo, mid, depth + 1));
        queue.push_back((mid, hi, depth + 1));
    }
    tiers
}

/// Recursive midpoint generation. Each midpoint sees its interval bounds and
/// the previously generated frame.
pub fn build_binary_search(frames: usize) -> Result<DependencyGraph> {
    if frames == 0 {
        return Err(SarError::EmptyGraph);
    }
    let mut deps = Deps::new();
    let mut prev = 0;
    for (mid, lo, hi) in bisection_tiers(frames).into_iter().flatten() {
        deps.insert(mid, BTreeSet::from([lo, hi, prev]));
        prev = mid;
    }
    DependencyGraph::new(frames + 2, deps, BTreeSet::new())
}

/// Keyframe interpolation, frame-by-frame generation and smoothing, with
/// stage-2 frames seeing every keyframe.
pub fn build_three_stage(frames: usize, keyframes: &[usize]) -> Result<DependencyGraph> {
    build_three_stage_with(frames, keyframes, Stage2Deps::AllKeyframes)
}

pub fn build_three_stage_with(
    frames: usize,
    keyframes: &[usize],
    stage2: Stage2Deps,
) -> Result<DependencyGraph> {
    check_keyframes(frames, keyframes)?;
    staged(frames, keyframes, keyframes, stage2)
}

/// Multi-level keyframe selection: each level's keyframes are generated as
/// one chain after the previous levels, then the remaining intervals are
/// filled frame by frame.
pub fn build_hierarchical(frames: usize, levels: &[Vec<usize>]) -> Result<DependencyGraph> {
    let chain: Vec<usize> = levels.iter().flatten().copied().collect();
    let mut sorted = chain.clone();
    sorted.sort_unstable();
    check_keyframes(frames, &sorted)?;
    staged(frames, &chain, &sorted, Stage2Deps::AllKeyframes)
}

fn check_keyframes(frames: usize, keyframes: &[usize]) -> Result<()> {
    if frames == 0 {
        return Err(SarError::EmptyGraph);
    }
    if let Some(&k) = keyframes.iter().find(|&&k| k == 0 || k > frames) {
        return Err(SarError::invalid(format!("keyframe {k} outside 1..={frames}")));
    }
    if let Some(w) = keyframes.windows(2).find(|w| w[0] >= w[1]) {
        return Err(SarError::invalid(format!(
            "keyframes must be strictly increasing, got {} then {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// `chain` is the keyframe generation order; `anchors` the same set sorted.
fn staged(
    frames: usize,
    chain: &[usize],
    anchors: &[usize],
    stage2: Stage2Deps,
) -> Result<DependencyGraph> {
    let end = frames + 1;
    let mut deps = Deps::new();
    let mut prev = 0;
    for (j, &k) in chain.iter().enumerate() {
        let mut ds: BTreeSet<usize> = chain[..j].iter().copied().collect();
        ds.extend([0, end, prev]);
        deps.insert(k, ds);
        prev = k;
    }
    let bounds: Vec<usize> = std::iter::once(0)
        .chain(anchors.iter().copied())
        .chain(std::iter::once(end))
        .collect();
    for w in bounds.windows(2) {
        let (left, right) = (w[0], w[1]);
        for t in left + 1..right {
            let mut ds: BTreeSet<usize> = match stage2 {
                Stage2Deps::AllKeyframes => anchors.iter().copied().collect(),
                Stage2Deps::IntervalBounds => [left, right].into_iter().collect(),
            };
            ds.extend([0, end, prev]);
            ds.extend(left + 1..t);
            ds.retain(|&d| d != t);
            deps.insert(t, ds);
            prev = t;
        }
    }
    Ok(DependencyGraph::new(frames + 2, deps, BTreeSet::new())?.with_smoothing())
}
