//! Named parameters, gradient accumulators, Adam state and the checkpoint
//! file format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "SARM" | u32 version
//! repeated until EOF:
//!   u32 name_len | name bytes (UTF-8) | u32 rank | rank × u64 dims | f64 data
//! ```
//!
//! Adam moments are stored as extra records named `adam.m/<param>` and
//! `adam.v/<param>`; the step counter as a rank-0 record `adam.step`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Result, SarError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SARM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        let n = value.numel();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.values.push(value);
        self.grads.push(vec![0.0; n]);
        self.m.push(vec![0.0; n]);
        self.v.push(vec![0.0; n]);
        id
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).unwrap())
    }

    pub fn add_full(&mut self, name: &str, shape: &[usize], v: f64) -> ParamId {
        self.add(name, Tensor::full(shape, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let acc = &mut self.grads[id.0];
        assert_eq!(acc.len(), g.len(), "gradient size for {}", self.names[id.0]);
        for (a, b) in acc.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm {
            let s = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                *g *= s;
            }
        }
        norm
    }

    /// Bias-corrected Adam update, then clears the gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - cfg.beta1.powf(t);
        let c2 = 1.0 - cfg.beta2.powf(t);
        for i in 0..self.values.len() {
            let (g, m, v) = (&self.grads[i], &mut self.m[i], &mut self.v[i]);
            for (k, p) in self.values[i].data_mut().iter_mut().enumerate() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *p -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        self.zero_grad();
    }

    pub fn write_checkpoint(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.values) {
            write_record(w, name, t.shape(), t.data())?;
        }
        for (i, name) in self.names.iter().enumerate() {
            let shape = self.values[i].shape();
            write_record(w, &format!("adam.m/{name}"), shape, &self.m[i])?;
            write_record(w, &format!("adam.v/{name}"), shape, &self.v[i])?;
        }
        write_record(w, "adam.step", &[], &[self.step as f64])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| SarError::io(path, e))
    }

    /// Replaces values (and optimizer state, when present) from a checkpoint.
    /// Every parameter of this store must appear with the same shape.
    pub fn read_checkpoint(&mut self, r: &mut impl Read) -> Result<()> {
        let records = read_records(r)?;
        let mut map: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        for (name, shape, data) in records {
            map.insert(name, (shape, data));
        }
        let mut fetch = |name: &str, shape: &[usize], required: bool| -> Result<Option<Vec<f64>>> {
            match map.remove(name) {
                Some((s, d)) if s == shape => Ok(Some(d)),
                Some((s, _)) => Err(ckpt_err(format!("{name} has shape {s:?}, expected {shape:?}"))),
                None if required => Err(ckpt_err(format!("missing parameter {name}"))),
                None => Ok(None),
            }
        };
        let mut values = Vec::with_capacity(self.values.len());
        let mut moments = Vec::with_capacity(self.values.len());
        for (name, t) in self.names.iter().zip(&self.values) {
            let d = fetch(name, t.shape(), true)?.unwrap();
            values.push(d);
            let m = fetch(&format!("adam.m/{name}"), t.shape(), false)?;
            let v = fetch(&format!("adam.v/{name}"), t.shape(), false)?;
            moments.push((m, v));
        }
        let step = fetch("adam.step", &[], false)?.map(|d| d[0] as u64);
        if let Some(extra) = map.keys().next() {
            return Err(ckpt_err(format!("unexpected record {extra}")));
        }
        for (i, (d, (m, v))) in values.into_iter().zip(moments).enumerate() {
            self.values[i].data_mut().copy_from_slice(&d);
            let n = d.len();
            self.m[i] = m.unwrap_or_else(|| vec![0.0; n]);
            self.v[i] = v.unwrap_or_else(|| vec![0.0; n]);
        }
        self.step = step.unwrap_or(0);
        self.zero_grad();
        Ok(())
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| SarError::io(path, e))?;
        self.read_checkpoint(&mut bytes.as_slice()).map_err(|e| match e {
            SarError::Parse { message, .. } => SarError::Parse {
                context: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

fn ckpt_err(message: String) -> SarError {
    SarError::Parse {
        context: "checkpoint".into(),
        message,
    }
}

fn write_record(w: &mut impl Write, name: &str, shape: &[usize], data: &[f64]) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

type Record = (String, Vec<usize>, Vec<f64>);

fn read_records(r: &mut impl Read) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| ckpt_err(format!("read failed: {e}")))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(ckpt_err("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ckpt_err(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec())
            .map_err(|_| ckpt_err("parameter name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| cur.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
            .collect::<Result<Vec<_>>>()?;
        out.push((name, shape, data));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(ckpt_err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
