//! Spatial pose encoder, FDAM temporal decoder and MLP pose decoder.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depgraph::BoolMatrix;
use crate::error::{Result, SarError};
use crate::motion::{Pose, Rotation};
use crate::nn::{check_mask, sinusoidal_position_encoding, Block, LayerNorm, Linear, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Joints per pose.
    pub joints: usize,
    /// Embedding width per joint.
    pub joint_dim: usize,
    pub spatial_blocks: usize,
    pub spatial_heads: usize,
    pub temporal_blocks: usize,
    pub temporal_heads: usize,
    pub ff_multiplier: usize,
    /// Sequence length including both given frames.
    pub positions: usize,
}

impl ModelConfig {
    /// J=4, D=8, 2 spatial and 2 temporal blocks.
    pub fn desk(positions: usize) -> Self {
        ModelConfig {
            joints: 4,
            joint_dim: 8,
            spatial_blocks: 2,
            spatial_heads: 2,
            temporal_blocks: 2,
            temporal_heads: 4,
            ff_multiplier: 4,
            positions,
        }
    }

    pub fn width(&self) -> usize {
        self.joints * self.joint_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SarError::invalid(format!("model config: {m}")));
        if self.joints == 0 || self.joint_dim == 0 || self.ff_multiplier == 0 {
            return bad("joints, joint_dim and ff_multiplier must be positive".into());
        }
        if self.positions < 3 {
            return bad(format!("need at least 3 positions, got {}", self.positions));
        }
        if self.spatial_heads == 0 || self.joint_dim % self.spatial_heads != 0 {
            return bad(format!(
                "joint_dim {} not divisible by spatial_heads {}",
                self.joint_dim, self.spatial_heads
            ));
        }
        if self.temporal_heads == 0 || self.width() % self.temporal_heads != 0 {
            return bad(format!(
                "width {} not divisible by temporal_heads {}",
                self.width(),
                self.temporal_heads
            ));
        }
        if self.width() % 2 != 0 {
            return bad(format!("width {} must be even for the position encoding", self.width()));
        }
        Ok(())
    }

    /// Number of scalar parameters of a model with this configuration.
    pub fn param_count(&self) -> usize {
        let linear = |a: usize, b: usize| a * b + b;
        let block = |d: usize| {
            let m = self.ff_multiplier;
            4 * d + 4 * linear(d, d) + linear(d, m * d) + linear(m * d, d)
        };
        let (d, w, j) = (self.joint_dim, self.width(), self.joints);
        linear(3, d)
            + j * d
            + self.spatial_blocks * block(d)
            + 2 * d
            + w
            + self.temporal_blocks * block(w)
            + 2 * w
            + linear(w, self.ff_multiplier * w)
            + linear(self.ff_multiplier * w, 3 * j)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ModelConfig = serde_json::from_str(text).map_err(|e| SarError::Parse {
            context: "model config".into(),
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SarError::io(path, e))?;
        ModelConfig::from_json(&text).map_err(|e| match e {
            SarError::Parse { message, .. } => SarError::Parse {
                context: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// Anything that maps an input buffer through a mask to one pose per row.
///
/// Row `r` of the result is the model's output at decoder row `r`; callers
/// pick the rows they need.
pub trait PoseRegressor {
    fn positions(&self) -> usize;
    fn joints(&self) -> usize;

    /// `frames` holds one pose per position; `empty[p]` marks positions whose
    /// pose is a placeholder.
    fn predict(&self, frames: &[Pose], empty: &[bool], mask: &BoolMatrix) -> Result<Vec<Pose>>;

    /// Runs several buffers through the same mask.
    fn predict_batch(&self, batch: &[(Vec<Pose>, Vec<bool>)], mask: &BoolMatrix) -> Result<Vec<Vec<Pose>>> {
        batch.iter().map(|(f, e)| self.predict(f, e, mask)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SarModel {
    config: ModelConfig,
    store: ParamStore,
    input: Linear,
    joint_embed: ParamId,
    spatial: Vec<Block>,
    spatial_ln: LayerNorm,
    empty_flag: ParamId,
    temporal: Vec<Block>,
    temporal_ln: LayerNorm,
    head_up: Linear,
    head_down: Linear,
    position_encoding: Tensor,
}

impl SarModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (j, d, w, m) = (config.joints, config.joint_dim, config.width(), config.ff_multiplier);
        let input = Linear::new(&mut store, "spatial.input", 3, d, &mut rng);
        let joint_embed = store.add_uniform("spatial.joint_embed", &[j, d], d, &mut rng);
        let spatial = (0..config.spatial_blocks)
            .map(|i| Block::new(&mut store, &format!("spatial.block{i}"), d, config.spatial_heads, m, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let spatial_ln = LayerNorm::new(&mut store, "spatial.ln", d);
        let empty_flag = store.add_uniform("temporal.empty_flag", &[w], w, &mut rng);
        let temporal = (0..config.temporal_blocks)
            .map(|i| Block::new(&mut store, &format!("temporal.block{i}"), w, config.temporal_heads, m, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let temporal_ln = LayerNorm::new(&mut store, "temporal.ln", w);
        let head_up = Linear::new(&mut store, "head.up", w, m * w, &mut rng);
        let head_down = Linear::new(&mut store, "head.down", m * w, 3 * j, &mut rng);
        let position_encoding = sinusoidal_position_encoding(config.positions, w)?;
        Ok(SarModel {
            config,
            store,
            input,
            joint_embed,
            spatial,
            spatial_ln,
            empty_flag,
            temporal,
            temporal_ln,
            head_up,
            head_down,
            position_encoding,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn head(&self) -> (Linear, Linear) {
        (self.head_up, self.head_down)
    }

    /// `inputs` is `[batch, N, J, 3]`; `empty` has `batch · N` entries.
    /// Returns `[batch, N, J·D]`.
    pub fn encode_on(&self, tape: &mut Tape, inputs: Var, empty: &[bool]) -> Var {
        let s = tape.shape(inputs).to_vec();
        let (b, n, j) = (s[0], s[1], s[2]);
        let d = self.config.joint_dim;
        let x = tape.reshape(inputs, &[b * n, j, 3]);
        let x = self.input.forward(tape, &self.store, x);
        let je = tape.param(&self.store, self.joint_embed);
        let mut x = tape.add_broadcast(x, je);
        let full = BoolMatrix::ones(j, j);
        for blk in &self.spatial {
            x = blk.forward(tape, &self.store, x, &full);
        }
        let x = self.spatial_ln.forward(tape, &self.store, x);
        let x = tape.reshape(x, &[b, n, j * d]);
        let flag = tape.param(&self.store, self.empty_flag);
        let x = tape.add_row_flag(x, flag, empty);
        let pe = tape.constant(self.position_encoding.clone());
        tape.add_broadcast(x, pe)
    }

    /// `[batch, N, J·D] -> [batch, N, J·D]` through the masked decoder blocks.
    pub fn temporal_on(&self, tape: &mut Tape, e: Var, mask: &BoolMatrix) -> Var {
        let mut x = e;
        for blk in &self.temporal {
            x = blk.forward(tape, &self.store, x, mask);
        }
        self.temporal_ln.forward(tape, &self.store, x)
    }

    /// `[batch, N, J·D] -> [batch, N, J·3]`
    pub fn decode_on(&self, tape: &mut Tape, e: Var) -> Var {
        let h = self.head_up.forward(tape, &self.store, e);
        let h = tape.gelu(h);
        self.head_down.forward(tape, &self.store, h)
    }

    pub fn forward_on(&self, tape: &mut Tape, inputs: Var, empty: &[bool], mask: &BoolMatrix) -> Var {
        let e = self.encode_on(tape, inputs, empty);
        let e = self.temporal_on(tape, e, mask);
        self.decode_on(tape, e)
    }

    fn check_frames(&self, frames: &[Pose], empty: &[bool]) -> Result<()> {
        let n = self.config.positions;
        if frames.len() != n || empty.len() != n {
            return Err(SarError::invalid(format!(
                "model expects {n} positions, got {} frames and {} flags",
                frames.len(),
                empty.len()
            )));
        }
        if let Some(p) = frames.iter().position(|f| f.joints() != self.config.joints) {
            return Err(SarError::invalid(format!(
                "frame {p} has {} joints, model expects {}",
                frames[p].joints(),
                self.config.joints
            )));
        }
        Ok(())
    }

    fn check_embedding(&self, e: &Tensor) -> Result<()> {
        let want = [self.config.positions, self.config.width()];
        if e.shape() != want {
            return Err(SarError::invalid(format!("embedding {:?}, expected {want:?}", e.shape())));
        }
        Ok(())
    }

    /// Per-frame encoding plus position encoding, `N × J·D`.
    pub fn encode_poses(&self, frames: &[Pose], empty: &[bool]) -> Result<Tensor> {
        self.check_frames(frames, empty)?;
        let mut tape = Tape::new();
        let x = tape.constant(poses_tensor(&[frames]));
        let e = self.encode_on(&mut tape, x, empty);
        Ok(squeeze(tape.value(e)))
    }

    pub fn temporal_decode(&self, e: &Tensor, mask: &BoolMatrix) -> Result<Tensor> {
        self.check_embedding(e)?;
        check_mask(mask, self.config.positions)?;
        let mut tape = Tape::new();
        let x = tape.constant(e.clone().reshaped(&[1, e.shape()[0], e.shape()[1]]));
        let y = self.temporal_on(&mut tape, x, mask);
        Ok(squeeze(tape.value(y)))
    }

    pub fn decode_poses(&self, e: &Tensor) -> Result<Vec<Pose>> {
        self.check_embedding(e)?;
        let mut tape = Tape::new();
        let x = tape.constant(e.clone().reshaped(&[1, e.shape()[0], e.shape()[1]]));
        let y = self.decode_on(&mut tape, x);
        Ok(tensor_poses(tape.value(y)).remove(0))
    }

    pub fn forward(&self, frames: &[Pose], empty: &[bool], mask: &BoolMatrix) -> Result<Vec<Pose>> {
        Ok(self.predict_batch(&[(frames.to_vec(), empty.to_vec())], mask)?.remove(0))
    }

    /// Writes the parameter checkpoint to `path` and the configuration to
    /// [`SarModel::config_path`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.store.save(path)?;
        let cfg = SarModel::config_path(path);
        std::fs::write(&cfg, self.config.to_json()).map_err(|e| SarError::io(&cfg, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config = ModelConfig::load(SarModel::config_path(path))?;
        let mut model = SarModel::new(config, 0)?;
        model.store.load(path)?;
        Ok(model)
    }

    pub fn config_path(checkpoint: &Path) -> PathBuf {
        let mut s = checkpoint.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }
}

impl PoseRegressor for SarModel {
    fn positions(&self) -> usize {
        self.config.positions
    }

    fn joints(&self) -> usize {
        self.config.joints
    }

    fn predict(&self, frames: &[Pose], empty: &[bool], mask: &BoolMatrix) -> Result<Vec<Pose>> {
        self.forward(frames, empty, mask)
    }

    fn predict_batch(&self, batch: &[(Vec<Pose>, Vec<bool>)], mask: &BoolMatrix) -> Result<Vec<Vec<Pose>>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        check_mask(mask, self.config.positions)?;
        for (f, e) in batch {
            self.check_frames(f, e)?;
        }
        let frames: Vec<&[Pose]> = batch.iter().map(|(f, _)| f.as_slice()).collect();
        let empty: Vec<bool> = batch.iter().flat_map(|(_, e)| e.iter().copied()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(poses_tensor(&frames));
        let y = self.forward_on(&mut tape, x, &empty, mask);
        Ok(tensor_poses(tape.value(y)))
    }
}

/// Packs equal-length pose sequences into `[batch, N, J, 3]`.
pub fn poses_tensor(seqs: &[&[Pose]]) -> Tensor {
    let n = seqs[0].len();
    let j = seqs[0][0].joints();
    let data: Vec<f64> = seqs.iter().flat_map(|s| s.iter().flat_map(|p| p.flat())).collect();
    Tensor::new(vec![seqs.len(), n, j, 3], data).expect("equal-length sequences")
}

/// Unpacks `[batch, N, J·3]` into pose sequences.
pub fn tensor_poses(t: &Tensor) -> Vec<Vec<Pose>> {
    let s = t.shape();
    let (b, n, w) = (s[0], s[1], s[2]);
    (0..b)
        .map(|bi| {
            (0..n)
                .map(|r| {
                    let row = &t.data()[(bi * n + r) * w..][..w];
                    Pose(row.chunks(3).map(|c| Rotation([c[0], c[1], c[2]])).collect())
                })
                .collect()
        })
        .collect()
}

fn squeeze(t: &Tensor) -> Tensor {
    let s = t.shape();
    t.clone().reshaped(&s[1..])
}
