use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{softmax_rows, Tape, Var, LAYER_NORM_EPS};
use super::tensor::Tensor;
use crate::depgraph::BoolMatrix;
use crate::error::{Result, SarError};

/// `y = x·W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add_uniform(&format!("{name}.w"), &[fan_in, fan_out], fan_in, rng);
        let b = store.add_uniform(&format!("{name}.b"), &[fan_out], fan_in, rng);
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w);
        tape.add_broadcast(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add_full(&format!("{name}.gain"), &[dim], 1.0),
            bias: store.add_full(&format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head scaled dot-product self-attention sharing one boolean mask
/// across heads.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(SarError::invalid(format!(
                "attention width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Attention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.fan_in
    }

    /// `x` is `[batch, len, dim]`; `mask` is `len × len`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mask: &BoolMatrix) -> Var {
        let h = self.heads;
        let dh = self.dim() / h;
        let q = self.q.forward(tape, store, x);
        let k = self.k.forward(tape, store, x);
        let v = self.v.forward(tape, store, x);
        let q = tape.split_heads(q, h);
        let k = tape.split_heads(k, h);
        let v = tape.split_heads(v, h);
        let scores = tape.bmm_nt(q, k);
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let p = tape.masked_softmax(scores, mask);
        let ctx = tape.bmm(p, v);
        let ctx = tape.merge_heads(ctx, h);
        self.out.forward(tape, store, ctx)
    }
}

/// `dim -> mult·dim -> GELU -> dim`
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, mult: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, mult * dim, rng),
            down: Linear::new(store, &format!("{name}.down"), mult * dim, dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(tape, store, x);
        let h = tape.gelu(h);
        self.down.forward(tape, store, h)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl Block {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_mult: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Block {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, ff_mult, rng),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mask: &BoolMatrix) -> Var {
        let h = self.ln1.forward(tape, store, x);
        let h = self.attn.forward(tape, store, h, mask);
        let x = tape.add(x, h);
        let h = self.ln2.forward(tape, store, x);
        let h = self.ff.forward(tape, store, h);
        tape.add(x, h)
    }
}

pub(crate) fn check_mask(mask: &BoolMatrix, n: usize) -> Result<()> {
    if mask.rows() != n || mask.cols() != n {
        return Err(SarError::InvalidMask(format!(
            "mask is {}x{}, sequence has {n} positions",
            mask.rows(),
            mask.cols()
        )));
    }
    if let Some(r) = mask.empty_row() {
        return Err(SarError::InvalidMask(format!("row {r} allows no column")));
    }
    Ok(())
}

/// Row-wise softmax of a `rows × cols` matrix; masked entries are exactly 0.
pub fn masked_softmax(logits: &Tensor, mask: &BoolMatrix) -> Result<Tensor> {
    if logits.rank() != 2 || logits.shape() != [mask.rows(), mask.cols()] {
        return Err(SarError::invalid(format!(
            "logits {:?} do not match a {}x{} mask",
            logits.shape(),
            mask.rows(),
            mask.cols()
        )));
    }
    if let Some(r) = mask.empty_row() {
        return Err(SarError::InvalidMask(format!("row {r} allows no column")));
    }
    let out = softmax_rows(logits.data(), mask, mask.rows(), mask.cols());
    Ok(Tensor::new(logits.shape().to_vec(), out).unwrap())
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

/// `PE[p, 2k] = sin(p / 10000^(2k/d))`, `PE[p, 2k+1] = cos(p / 10000^(2k/d))`.
pub fn sinusoidal_position_encoding(n: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(SarError::invalid(format!("position encoding width {d} must be even")));
    }
    let mut data = vec![0.0; n * d];
    for p in 0..n {
        for k in 0..d / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
            data[p * d + 2 * k] = angle.sin();
            data[p * d + 2 * k + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(vec![n, d], data).unwrap())
}

/// Attention over one `len × dim` sequence outside of training.
pub fn multi_head_attention(x: &Tensor, mask: &BoolMatrix, attn: &Attention, store: &ParamStore) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[1] != attn.dim() {
        return Err(SarError::invalid(format!(
            "attention input {:?} does not have width {}",
            x.shape(),
            attn.dim()
        )));
    }
    check_mask(mask, x.shape()[0])?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone().reshaped(&[1, x.shape()[0], x.shape()[1]]));
    let y = attn.forward(&mut tape, store, xv, mask);
    Ok(tape.value(y).clone().reshaped(x.shape()))
}
