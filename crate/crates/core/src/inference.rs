//! The generation loop: walk the schedule writing each predicted frame back
//! into the input buffer, then regenerate all interior frames in one pass.

use crate::depgraph::{Fdam, Schedule};
use crate::error::{Result, SarError};
use crate::model::PoseRegressor;
use crate::motion::{slerp_motion, Pose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    /// One forward pass per target.
    #[default]
    Sequential,
    /// One forward pass per schedule level.
    Levels,
}

/// Input buffer for one sequence: a pose per position and which positions
/// still hold placeholders.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBuffer {
    pub frames: Vec<Pose>,
    pub empty: Vec<bool>,
    /// How many times each position has been written after initialization.
    pub writes: Vec<usize>,
}

impl FrameBuffer {
    /// Start pose at 0, end pose at `n - 1`, identity placeholders elsewhere.
    pub fn new(start: &Pose, end: &Pose, n: usize) -> Result<Self> {
        if start.joints() != end.joints() {
            return Err(SarError::invalid(format!(
                "start has {} joints, end has {}",
                start.joints(),
                end.joints()
            )));
        }
        if n < 3 {
            return Err(SarError::EmptyGraph);
        }
        let mut frames = vec![Pose::identity(start.joints()); n];
        frames[0] = start.clone();
        frames[n - 1] = end.clone();
        let mut empty = vec![true; n];
        empty[0] = false;
        empty[n - 1] = false;
        Ok(FrameBuffer {
            frames,
            empty,
            writes: vec![0; n],
        })
    }

    pub fn write(&mut self, p: usize, pose: Pose) {
        self.frames[p] = pose;
        self.empty[p] = false;
        self.writes[p] += 1;
    }

    pub fn interior(&self) -> Vec<Pose> {
        self.frames[1..self.frames.len() - 1].to_vec()
    }
}

/// Result of one generation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Interior frames `1..=T`.
    pub frames: Vec<Pose>,
    pub passes: usize,
    pub writes: Vec<usize>,
}

fn check<M: PoseRegressor + ?Sized>(model: &M, schedule: &Schedule, fdam: &Fdam) -> Result<()> {
    let n = schedule.n_positions;
    if model.positions() != n || fdam.n() != n {
        return Err(SarError::invalid(format!(
            "model has {} positions, schedule {n}, mask {}",
            model.positions(),
            fdam.n()
        )));
    }
    Ok(())
}

/// Runs the chain over many buffers at once. Returns the number of forward
/// passes.
pub fn run_chain<M: PoseRegressor + ?Sized>(
    buffers: &mut [FrameBuffer],
    model: &M,
    schedule: &Schedule,
    fdam: &Fdam,
    exec: Execution,
) -> Result<usize> {
    check(model, schedule, fdam)?;
    let groups: Vec<Vec<usize>> = match exec {
        Execution::Sequential => schedule.order.iter().map(|&t| vec![t]).collect(),
        Execution::Levels => schedule.levels.clone(),
    };
    for group in &groups {
        let batch: Vec<(Vec<Pose>, Vec<bool>)> = buffers
            .iter()
            .map(|b| (b.frames.clone(), b.empty.clone()))
            .collect();
        let out = model.predict_batch(&batch, &fdam.staged)?;
        for (buf, rows) in buffers.iter_mut().zip(out) {
            for &t in group {
                buf.write(t, rows[schedule.source[&t]].clone());
            }
        }
    }
    Ok(groups.len())
}

/// One full-visibility pass replacing every interior frame.
pub fn run_smoothing<M: PoseRegressor + ?Sized>(buffers: &mut [FrameBuffer], model: &M, fdam: &Fdam) -> Result<()> {
    let batch: Vec<(Vec<Pose>, Vec<bool>)> = buffers
        .iter()
        .map(|b| (b.frames.clone(), b.empty.clone()))
        .collect();
    let out = model.predict_batch(&batch, &fdam.smoothing)?;
    for (buf, rows) in buffers.iter_mut().zip(out) {
        let n = rows.len();
        for (p, pose) in rows.into_iter().enumerate().take(n - 1).skip(1) {
            buf.write(p, pose);
        }
    }
    Ok(())
}

fn generate<M: PoseRegressor + ?Sized>(
    start: &Pose,
    end: &Pose,
    model: &M,
    schedule: &Schedule,
    fdam: &Fdam,
    exec: Execution,
    smoothing: bool,
) -> Result<Generation> {
    check(model, schedule, fdam)?;
    if start.joints() != model.joints() {
        return Err(SarError::invalid(format!(
            "poses have {} joints, model expects {}",
            start.joints(),
            model.joints()
        )));
    }
    let mut bufs = [FrameBuffer::new(start, end, schedule.n_positions)?];
    let mut passes = run_chain(&mut bufs, model, schedule, fdam, exec)?;
    if smoothing {
        run_smoothing(&mut bufs, model, fdam)?;
        passes += 1;
    }
    let [buf] = bufs;
    Ok(Generation {
        frames: buf.interior(),
        passes,
        writes: buf.writes,
    })
}

/// Chain generation followed by the smoothing pass.
pub fn run_schedule<M: PoseRegressor + ?Sized>(
    start: &Pose,
    end: &Pose,
    model: &M,
    schedule: &Schedule,
    fdam: &Fdam,
) -> Result<Vec<Pose>> {
    Ok(generate(start, end, model, schedule, fdam, Execution::Sequential, true)?.frames)
}

pub fn run_schedule_with<M: PoseRegressor + ?Sized>(
    start: &Pose,
    end: &Pose,
    model: &M,
    schedule: &Schedule,
    fdam: &Fdam,
    exec: Execution,
) -> Result<Generation> {
    generate(start, end, model, schedule, fdam, exec, true)
}

/// Chain generation only.
pub fn run_without_smoothing<M: PoseRegressor + ?Sized>(
    start: &Pose,
    end: &Pose,
    model: &M,
    schedule: &Schedule,
    fdam: &Fdam,
) -> Result<Vec<Pose>> {
    Ok(generate(start, end, model, schedule, fdam, Execution::Sequential, false)?.frames)
}

pub fn run_without_smoothing_with<M: PoseRegressor + ?Sized>(
    start: &Pose,
    end: &Pose,
    model: &M,
    schedule: &Schedule,
    fdam: &Fdam,
    exec: Execution,
) -> Result<Generation> {
    generate(start, end, model, schedule, fdam, exec, false)
}

/// SLERP baseline with `frames` interior frames.
pub fn interpolate_slerp(start: &Pose, end: &Pose, frames: usize) -> Result<Vec<Pose>> {
    if frames == 0 {
        return Ok(Vec::new());
    }
    Ok(slerp_motion(start, end, frames, 1.0)?.frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::{build_original_ar, build_three_stage, derive_fdam, topological_schedule, BoolMatrix};
    use crate::motion::Rotation;

    /// Returns `truth[target(r)]` at every source row, and `truth[r]` under a
    /// full-visibility mask, checking that only valid frames were visible.
    struct Oracle {
        truth: Vec<Pose>,
        schedule: Schedule,
    }

    impl PoseRegressor for Oracle {
        fn positions(&self) -> usize {
            self.truth.len()
        }
        fn joints(&self) -> usize {
            self.truth[0].joints()
        }
        fn predict(&self, frames: &[Pose], empty: &[bool], mask: &BoolMatrix) -> Result<Vec<Pose>> {
            let n = self.truth.len();
            let full = (1..n - 1).all(|r| mask.allowed(r).count() == n);
            let mut out = frames.to_vec();
            if full {
                out.clone_from_slice(&self.truth);
                return Ok(out);
            }
            for &t in &self.schedule.order {
                let r = self.schedule.source[&t];
                if mask.allowed(r).all(|c| !empty[c]) {
                    out[r] = self.truth[t].clone();
                }
            }
            Ok(out)
        }
    }

    fn truth(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| Pose(vec![Rotation([0.1 * i as f64, -0.05 * i as f64, 0.02]); 2]))
            .collect()
    }

    #[test]
    fn oracle_reproduces_truth() {
        let s = topological_schedule(&build_three_stage(29, &[1, 9, 19, 29]).unwrap()).unwrap();
        let f = derive_fdam(&s, 31).unwrap();
        let gt = truth(31);
        let oracle = Oracle { truth: gt.clone(), schedule: s.clone() };
        let g = run_schedule_with(&gt[0], &gt[30], &oracle, &s, &f, Execution::Sequential).unwrap();
        assert_eq!(g.frames, gt[1..30].to_vec());
        assert_eq!(g.passes, 30);
        assert!(g.writes[1..30].iter().all(|&w| w == 2));
        assert_eq!((g.writes[0], g.writes[30]), (0, 0));

        let g = run_without_smoothing_with(&gt[0], &gt[30], &oracle, &s, &f, Execution::Sequential).unwrap();
        assert_eq!(g.frames, gt[1..30].to_vec());
        assert!(g.writes[1..30].iter().all(|&w| w == 1));
    }

    #[test]
    fn single_frame_takes_two_passes() {
        let s = topological_schedule(&build_original_ar(1).unwrap()).unwrap();
        let f = derive_fdam(&s, 3).unwrap();
        let gt = truth(3);
        let oracle = Oracle { truth: gt.clone(), schedule: s.clone() };
        let g = run_schedule_with(&gt[0], &gt[2], &oracle, &s, &f, Execution::Sequential).unwrap();
        assert_eq!(g.passes, 2);
        assert_eq!(g.frames, vec![gt[1].clone()]);
    }

    #[test]
    fn mismatch_is_rejected() {
        let s = topological_schedule(&build_original_ar(3).unwrap()).unwrap();
        let f = derive_fdam(&s, 5).unwrap();
        let gt = truth(6);
        let oracle = Oracle { truth: gt.clone(), schedule: s.clone() };
        assert!(run_schedule(&gt[0], &gt[5], &oracle, &s, &f).is_err());
    }

    #[test]
    fn slerp_baseline_endpoints() {
        let a = Pose(vec![Rotation([0.0, 0.0, 0.0])]);
        let b = Pose(vec![Rotation([0.0, 0.0, 1.0])]);
        let out = interpolate_slerp(&a, &b, 3).unwrap();
        assert_eq!(out.len(), 3);
        assert!((out[1].0[0].0[2] - 0.5).abs() < 1e-12);
        assert!(interpolate_slerp(&a, &b, 0).unwrap().is_empty());
    }
}
