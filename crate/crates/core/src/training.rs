//! Two-step training: teacher-forced chain training, then smoothing
//! fine-tuning on the model's own rollouts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depgraph::{Fdam, Schedule};
use crate::error::{Result, SarError};
use crate::inference::{run_chain, Execution, FrameBuffer};
use crate::model::{poses_tensor, PoseRegressor, SarModel};
use crate::motion::{Motion, Pose};
use crate::nn::{AdamConfig, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Teacher-forcing steps.
    pub steps1: usize,
    /// Smoothing fine-tuning steps.
    pub steps2: usize,
    pub lr: f64,
    pub seed: u64,
    /// Steps between loss reports (train and validation).
    pub log_every: usize,
    /// Validation sequences evaluated at each report (0 = all).
    pub val_limit: usize,
    pub clip_norm: f64,
    /// Directory receiving `step1.ckpt`, `final.ckpt` and `loss.csv`.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            steps1: 20_000,
            steps2: 5_000,
            lr: 1e-4,
            seed: 0,
            log_every: 100,
            val_limit: 64,
            clip_norm: 1.0,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(SarError::invalid("batch_size and log_every must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SarError::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(SarError::invalid("clip_norm must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Mean squared difference over all selected coordinates.
pub fn mse_loss(generated: &[Pose], truth: &[Pose]) -> Result<f64> {
    if generated.len() != truth.len() {
        return Err(SarError::invalid(format!(
            "{} generated frames vs {} ground-truth frames",
            generated.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (g, t) in generated.iter().zip(truth) {
        let (g, t) = (g.flat(), t.flat());
        if g.len() != t.len() {
            return Err(SarError::invalid("pose joint counts differ"));
        }
        sum += g.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += g.len();
    }
    if count == 0 {
        return Err(SarError::invalid("no coordinates selected for the loss"));
    }
    Ok(sum / count as f64)
}

fn check_batch(model: &SarModel, batch: &[&[Pose]]) -> Result<()> {
    let n = model.config().positions;
    if batch.is_empty() {
        return Err(SarError::invalid("empty batch"));
    }
    for seq in batch {
        if seq.len() != n || seq.iter().any(|p| p.joints() != model.config().joints) {
            return Err(SarError::invalid(format!(
                "training sequence must have {n} frames of {} joints",
                model.config().joints
            )));
        }
    }
    Ok(())
}

/// Ground truth everywhere, staged mask; rows `source(o_i)` are compared with
/// frames `o_i`.
pub fn teacher_forcing_loss_on(
    model: &SarModel,
    tape: &mut Tape,
    inputs: Var,
    truth: &[&[Pose]],
    schedule: &Schedule,
    fdam: &Fdam,
) -> Var {
    let b = truth.len();
    let n = schedule.n_positions;
    let y = model.forward_on(tape, inputs, &vec![false; b * n], &fdam.staged);
    let rows = schedule.source_rows();
    let pred = tape.gather_rows(y, &rows);
    let targets: Vec<Vec<Pose>> = truth
        .iter()
        .map(|s| schedule.order.iter().map(|&t| s[t].clone()).collect())
        .collect();
    let target = targets_tensor(&targets);
    tape.mse(pred, target)
}

/// Full-visibility pass over already rolled-out buffers against interior
/// ground truth. The rollout enters as a constant.
pub fn smoothing_loss_on(model: &SarModel, tape: &mut Tape, rollout: &[Vec<Pose>], truth: &[&[Pose]], fdam: &Fdam) -> Var {
    let b = rollout.len();
    let n = rollout[0].len();
    let refs: Vec<&[Pose]> = rollout.iter().map(Vec::as_slice).collect();
    let x = tape.constant(poses_tensor(&refs));
    let y = model.forward_on(tape, x, &vec![false; b * n], &fdam.smoothing);
    let rows: Vec<usize> = (1..n - 1).collect();
    let pred = tape.gather_rows(y, &rows);
    let targets: Vec<Vec<Pose>> = truth.iter().map(|s| s[1..n - 1].to_vec()).collect();
    tape.mse(pred, targets_tensor(&targets))
}

fn targets_tensor(targets: &[Vec<Pose>]) -> Tensor {
    let refs: Vec<&[Pose]> = targets.iter().map(Vec::as_slice).collect();
    let t = poses_tensor(&refs);
    let s = t.shape().to_vec();
    t.reshaped(&[s[0], s[1], s[2] * s[3]])
}

/// Stage-1/2 chain generation from the given frames only, without gradient.
pub fn rollout(model: &SarModel, truth: &[&[Pose]], schedule: &Schedule, fdam: &Fdam) -> Result<Vec<Vec<Pose>>> {
    let n = schedule.n_positions;
    let mut bufs = truth
        .iter()
        .map(|s| FrameBuffer::new(&s[0], &s[n - 1], n))
        .collect::<Result<Vec<_>>>()?;
    run_chain(&mut bufs, model, schedule, fdam, Execution::Sequential)?;
    Ok(bufs.into_iter().map(|b| b.frames).collect())
}

pub fn teacher_forcing_value(model: &SarModel, batch: &[&[Pose]], schedule: &Schedule, fdam: &Fdam) -> Result<f64> {
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let x = tape.constant(poses_tensor(batch));
    let l = teacher_forcing_loss_on(model, &mut tape, x, batch, schedule, fdam);
    Ok(tape.value(l).item())
}

pub fn smoothing_value(model: &SarModel, batch: &[&[Pose]], schedule: &Schedule, fdam: &Fdam) -> Result<f64> {
    check_batch(model, batch)?;
    let rolled = rollout(model, batch, schedule, fdam)?;
    let mut tape = Tape::new();
    let l = smoothing_loss_on(model, &mut tape, &rolled, batch, fdam);
    Ok(tape.value(l).item())
}

fn apply(model: &mut SarModel, tape: &Tape, loss: Var, adam: &AdamConfig, clip: f64) -> f64 {
    let grads = tape.backward(loss);
    tape.accumulate(&grads, model.store_mut());
    model.store_mut().clip_grad_norm(clip);
    model.store_mut().adam_step(adam);
    tape.value(loss).item()
}

/// One optimizer step of teacher-forced training. Returns the loss before
/// the update.
pub fn teacher_forcing_step(
    model: &mut SarModel,
    batch: &[&[Pose]],
    schedule: &Schedule,
    fdam: &Fdam,
    adam: &AdamConfig,
    clip: f64,
) -> Result<f64> {
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let x = tape.constant(poses_tensor(batch));
    let loss = teacher_forcing_loss_on(model, &mut tape, x, batch, schedule, fdam);
    Ok(apply(model, &tape, loss, adam, clip))
}

/// One optimizer step of smoothing fine-tuning. The teacher-forced loss on
/// the same batch is added so the staged passes keep being trained; the
/// returned value is the smoothing loss alone.
pub fn smoothing_finetune_step(
    model: &mut SarModel,
    batch: &[&[Pose]],
    schedule: &Schedule,
    fdam: &Fdam,
    adam: &AdamConfig,
    clip: f64,
) -> Result<f64> {
    check_batch(model, batch)?;
    let rolled = rollout(model, batch, schedule, fdam)?;
    let mut tape = Tape::new();
    let smooth = smoothing_loss_on(model, &mut tape, &rolled, batch, fdam);
    let x = tape.constant(poses_tensor(batch));
    let staged = teacher_forcing_loss_on(model, &mut tape, x, batch, schedule, fdam);
    let total = tape.add(smooth, staged);
    let value = tape.value(smooth).item();
    apply(model, &tape, total, adam, clip);
    Ok(value)
}

/// Batch indices for global step `step`; independent of earlier steps so a
/// resumed run samples the same batches.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub split: &'static str,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<LossRecord>,
    /// Training loss of every step executed, in order.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn last_train_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

fn sequences(data: &[Motion], n: usize, what: &str) -> Result<Vec<Vec<Pose>>> {
    data.iter()
        .enumerate()
        .map(|(i, m)| {
            if m.len() != n {
                Err(SarError::invalid(format!("{what} sequence {i} has {} frames, expected {n}", m.len())))
            } else {
                Ok(m.frames.clone())
            }
        })
        .collect()
}

/// Runs both training steps, resuming from `model.store().step_count()`.
///
/// Steps `0..steps1` use teacher forcing, steps `steps1..steps1 + steps2`
/// smoothing fine-tuning. With an output directory, `step1.ckpt` is written
/// when the first step finishes, `final.ckpt` at the end and the loss log to
/// `loss.csv` (appended on resume).
pub fn train(
    model: &mut SarModel,
    train_set: &[Motion],
    val_set: &[Motion],
    schedule: &Schedule,
    fdam: &Fdam,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = model.positions();
    if schedule.n_positions != n || fdam.n() != n {
        return Err(SarError::invalid(format!(
            "model has {n} positions, schedule {} and mask {}",
            schedule.n_positions,
            fdam.n()
        )));
    }
    let train_seqs = sequences(train_set, n, "training")?;
    let mut val_seqs = sequences(val_set, n, "validation")?;
    if cfg.val_limit > 0 {
        val_seqs.truncate(cfg.val_limit);
    }
    if train_seqs.is_empty() {
        return Err(SarError::invalid("training set is empty"));
    }
    let start = model.store().step_count();
    if cfg.steps1 == 0 && cfg.steps2 > 0 && start == 0 {
        return Err(SarError::State(
            "smoothing fine-tuning needs a model trained with teacher forcing first".into(),
        ));
    }
    let mut log = match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| SarError::io(dir, e))?;
            Some(CsvLog::open(&dir.join("loss.csv"), start > 0)?)
        }
        None => None,
    };
    let adam = cfg.adam();
    let total = (cfg.steps1 + cfg.steps2) as u64;
    let clock = Instant::now();
    let mut report = TrainReport::default();
    for step in start..total {
        let stage1 = step < cfg.steps1 as u64;
        let idx = batch_indices(cfg.seed, step, cfg.batch_size, train_seqs.len());
        let batch: Vec<&[Pose]> = idx.iter().map(|&i| train_seqs[i].as_slice()).collect();
        let loss = if stage1 {
            teacher_forcing_step(model, &batch, schedule, fdam, &adam, cfg.clip_norm)?
        } else {
            smoothing_finetune_step(model, &batch, schedule, fdam, &adam, cfg.clip_norm)?
        };
        if !loss.is_finite() || !model.store().ids().all(|id| model.store().value(id).is_finite()) {
            return Err(SarError::Diverged {
                step: step as usize,
                loss,
            });
        }
        report.losses.push(loss);
        let done = step + 1;
        if done % cfg.log_every as u64 == 0 || done == total || done == cfg.steps1 as u64 {
            let secs = clock.elapsed().as_secs_f64();
            let split = if stage1 { "train" } else { "train_smooth" };
            let mut recs = vec![LossRecord { step: done, split, loss, seconds: secs }];
            if !val_seqs.is_empty() {
                let refs: Vec<&[Pose]> = val_seqs.iter().map(Vec::as_slice).collect();
                let (split, v) = if stage1 {
                    ("val", teacher_forcing_value(model, &refs, schedule, fdam)?)
                } else {
                    ("val_smooth", smoothing_value(model, &refs, schedule, fdam)?)
                };
                recs.push(LossRecord { step: done, split, loss: v, seconds: secs });
            }
            for r in recs {
                if let Some(l) = log.as_mut() {
                    l.write(&r)?;
                }
                report.records.push(r);
            }
        }
        if let Some(dir) = &cfg.out_dir {
            if done == cfg.steps1 as u64 {
                model.save(dir.join("step1.ckpt"))?;
            }
        }
    }
    if let Some(dir) = &cfg.out_dir {
        if start < cfg.steps1 as u64 || total == 0 {
            model.save(dir.join("step1.ckpt"))?;
        }
        model.save(dir.join("final.ckpt"))?;
    }
    Ok(report)
}

struct CsvLog {
    path: PathBuf,
    file: std::fs::File,
}

impl CsvLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let exists = path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| SarError::io(path, e))?;
        let mut log = CsvLog {
            path: path.to_path_buf(),
            file,
        };
        if !(append && exists) {
            writeln!(log.file, "step,split,loss,wall_clock_seconds").map_err(|e| SarError::io(path, e))?;
        }
        Ok(log)
    }

    fn write(&mut self, r: &LossRecord) -> Result<()> {
        writeln!(self.file, "{},{},{},{:.3}", r.step, r.split, r.loss, r.seconds).map_err(|e| SarError::io(&self.path, e))
    }
}
