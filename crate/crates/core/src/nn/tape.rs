//! Reverse-mode differentiation over a recorded list of tensor operations.
//!
//! A [`Tape`] lives for one forward pass. Parameters are copied in from a
//! [`ParamStore`]; after [`Tape::backward`] their gradients can be added back
//! with [`Tape::accumulate`].

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::depgraph::BoolMatrix;

/// Additive bias applied to masked logits before the softmax.
pub const MASK_NEG: f64 = -1e30;

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    /// `a[.., k] · w[k, n]`
    MatMul(Var, Var),
    /// batched `a[b, r, k] · c[b, k, n]`, or `a · cᵀ` with `c[b, n, k]`
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    /// `b`'s shape is a suffix of `a`'s
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Vec<f64>, inv_std: Vec<f64> },
    MaskedSoftmax { x: Var },
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var, heads: usize },
    Reshape(Var),
    GatherRows { x: Var, rows: Vec<usize> },
    AddRowFlag { x: Var, flag: Var, rows: Vec<bool> },
    Mse { x: Var, target: Rc<Tensor> },
    Dot { x: Var, weights: Rc<Tensor> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked (for input sensitivity checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, w: Var) -> Var {
        let (av, wv) = (self.value(a), self.value(w));
        assert_eq!(wv.rank(), 2, "matmul weight must be a matrix");
        let (k, n) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(av.last_dim(), k, "matmul inner dims {:?} x {:?}", av.shape(), wv.shape());
        let m = av.numel() / k;
        let mut out = vec![0.0; m * n];
        gemm_nn(av.data(), wv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let ng = self.ng(&[a, w]);
        self.push(Tensor::new(shape, out).unwrap(), Op::MatMul(a, w), ng)
    }

    fn bmm_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.rank() == 3 && bv.rank() == 3, "batched matmul needs rank-3 operands");
        let (bs, r, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        assert_eq!(bv.shape()[0], bs);
        let n = if trans_b {
            assert_eq!(bv.shape()[2], k);
            bv.shape()[1]
        } else {
            assert_eq!(bv.shape()[1], k);
            bv.shape()[2]
        };
        let mut out = vec![0.0; bs * r * n];
        for i in 0..bs {
            let ai = &av.data()[i * r * k..(i + 1) * r * k];
            let bi = &bv.data()[i * k * n..(i + 1) * k * n];
            let oi = &mut out[i * r * n..(i + 1) * r * n];
            if trans_b {
                gemm_nt(ai, bi, oi, r, k, n);
            } else {
                gemm_nn(ai, bi, oi, r, k, n);
            }
        }
        let ng = self.ng(&[a, b]);
        self.push(
            Tensor::new(vec![bs, r, n], out).unwrap(),
            Op::BatchMatMul { a, b, trans_b },
            ng,
        )
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        self.bmm_impl(a, b, false)
    }

    /// Batched `a · bᵀ`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Var {
        self.bmm_impl(a, b, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data).unwrap();
        let ng = self.ng(&[a, b]);
        self.push(t, Op::Add(a, b), ng)
    }

    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        assert!(
            sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb,
            "cannot broadcast {sb:?} onto {sa:?}"
        );
        let period = bv.numel();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data()[i % period])
            .collect();
        let t = Tensor::new(sa.to_vec(), data).unwrap();
        let ng = self.ng(&[a, b]);
        self.push(t, Op::AddBroadcast(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * s).collect()).unwrap();
        let ng = self.ng(&[a]);
        self.push(t, Op::Scale(a, s), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data).unwrap();
        let ng = self.ng(&[a]);
        self.push(t, Op::Gelu(a), ng)
    }

    /// Normalizes over the last axis with epsilon inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        assert_eq!(self.value(gain).numel(), c);
        assert_eq!(self.value(bias).numel(), c);
        let rows = xv.numel() / c;
        let mut normed = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for (o, v) in normed[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let out: Vec<f64> = normed
            .iter()
            .enumerate()
            .map(|(i, v)| v * g[i % c] + b[i % c])
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), out).unwrap();
        let ng = self.ng(&[x, gain, bias]);
        self.push(
            t,
            Op::LayerNorm { x, gain, bias, normed, inv_std },
            ng,
        )
    }

    /// Row-wise softmax over the last axis of `x[.., r, c]`, with the same
    /// `r × c` mask applied to every leading slice.
    pub fn masked_softmax(&mut self, x: Var, mask: &BoolMatrix) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        assert!(s.len() >= 2);
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        assert!(mask.rows() == r && mask.cols() == c, "mask {}x{} vs logits {r}x{c}", mask.rows(), mask.cols());
        let out = softmax_rows(xv.data(), mask, r, c);
        let t = Tensor::new(s.to_vec(), out).unwrap();
        let ng = self.ng(&[x]);
        self.push(t, Op::MaskedSoftmax { x }, ng)
    }

    /// `[b, l, h·d] -> [b·h, l, d]`
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let (b, l, w) = dims3(xv.shape());
        assert_eq!(w % heads, 0);
        let d = w / heads;
        let mut out = vec![0.0; xv.numel()];
        for bi in 0..b {
            for li in 0..l {
                for h in 0..heads {
                    let src = &xv.data()[(bi * l + li) * w + h * d..][..d];
                    out[((bi * heads + h) * l + li) * d..][..d].copy_from_slice(src);
                }
            }
        }
        let t = Tensor::new(vec![b * heads, l, d], out).unwrap();
        let ng = self.ng(&[x]);
        self.push(t, Op::SplitHeads { x, heads }, ng)
    }

    /// `[b·h, l, d] -> [b, l, h·d]`
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let (bh, l, d) = dims3(xv.shape());
        assert_eq!(bh % heads, 0);
        let b = bh / heads;
        let w = heads * d;
        let mut out = vec![0.0; xv.numel()];
        for bi in 0..b {
            for h in 0..heads {
                for li in 0..l {
                    let src = &xv.data()[((bi * heads + h) * l + li) * d..][..d];
                    out[(bi * l + li) * w + h * d..][..d].copy_from_slice(src);
                }
            }
        }
        let t = Tensor::new(vec![b, l, w], out).unwrap();
        let ng = self.ng(&[x]);
        self.push(t, Op::MergeHeads { x, heads }, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        let ng = self.ng(&[x]);
        self.push(t, Op::Reshape(x), ng)
    }

    /// Selects rows along axis 1 of `x[b, n, c]`, giving `[b, rows.len(), c]`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        let (b, n, c) = dims3(xv.shape());
        let mut out = Vec::with_capacity(b * rows.len() * c);
        for bi in 0..b {
            for &r in rows {
                assert!(r < n, "row {r} out of range {n}");
                out.extend_from_slice(&xv.data()[(bi * n + r) * c..][..c]);
            }
        }
        let t = Tensor::new(vec![b, rows.len(), c], out).unwrap();
        let ng = self.ng(&[x]);
        self.push(t, Op::GatherRows { x, rows: rows.to_vec() }, ng)
    }

    /// Adds `flag[c]` to every row `i` of `x[.., c]` with `rows[i]` set.
    pub fn add_row_flag(&mut self, x: Var, flag: Var, rows: &[bool]) -> Var {
        let (xv, fv) = (self.value(x), self.value(flag));
        let c = xv.last_dim();
        assert_eq!(fv.numel(), c);
        assert_eq!(rows.len() * c, xv.numel());
        let mut out = xv.data().to_vec();
        for (r, _) in rows.iter().enumerate().filter(|(_, &f)| f) {
            for (o, f) in out[r * c..(r + 1) * c].iter_mut().zip(fv.data()) {
                *o += f;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out).unwrap();
        let ng = self.ng(&[x, flag]);
        self.push(t, Op::AddRowFlag { x, flag, rows: rows.to_vec() }, ng)
    }

    /// Mean squared difference against a constant target.
    pub fn mse(&mut self, x: Var, target: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "mse shape mismatch");
        assert!(xv.numel() > 0);
        let s: f64 = xv.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let v = s / xv.numel() as f64;
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(v), Op::Mse { x, target: Rc::new(target) }, ng)
    }

    /// `Σ x ⊙ weights`
    pub fn dot(&mut self, x: Var, weights: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.numel(), weights.numel());
        let v = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(v), Op::Dot { x, weights: Rc::new(weights) }, ng)
    }

    /// Back-propagates from a scalar output.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Adds parameter gradients into the store.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = grads.of(v) {
                store.accumulate_grad(id, g);
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, w) => {
                let (av, wv) = (self.value(*a), self.value(*w));
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let m = av.numel() / k;
                send(*a, &|ga| gemm_nt(g, wv.data(), ga, m, n, k));
                send(*w, &|gw| gemm_tn(av.data(), g, gw, m, k, n));
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bs, r, k) = dims3(av.shape());
                let n = out.shape()[2];
                send(*a, &|ga| {
                    for i in 0..bs {
                        let gi = &g[i * r * n..(i + 1) * r * n];
                        let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                        let gai = &mut ga[i * r * k..(i + 1) * r * k];
                        if *trans_b {
                            gemm_nn(gi, bi, gai, r, n, k);
                        } else {
                            gemm_nt(gi, bi, gai, r, n, k);
                        }
                    }
                });
                send(*b, &|gb| {
                    for i in 0..bs {
                        let gi = &g[i * r * n..(i + 1) * r * n];
                        let ai = &av.data()[i * r * k..(i + 1) * r * k];
                        let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            gemm_tn(gi, ai, gbi, r, n, k);
                        } else {
                            gemm_tn(ai, gi, gbi, r, k, n);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                send(*a, &|ga| add_into(ga, g));
                send(*b, &|gb| add_into(gb, g));
            }
            Op::AddBroadcast(a, b) => {
                send(*a, &|ga| add_into(ga, g));
                send(*b, &|gb| {
                    let p = gb.len();
                    for (i, v) in g.iter().enumerate() {
                        gb[i % p] += v;
                    }
                });
            }
            Op::Scale(a, s) => send(*a, &|ga| {
                for (o, v) in ga.iter_mut().zip(g) {
                    *o += v * s;
                }
            }),
            Op::Gelu(a) => {
                let av = self.value(*a);
                send(*a, &|ga| {
                    for ((o, &x), &gv) in ga.iter_mut().zip(av.data()).zip(g) {
                        let u = GELU_C * (x + GELU_K * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        *o += gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                let c = self.value(*x).last_dim();
                let gv = self.value(*gain).data();
                send(*gain, &|gg| {
                    for (i, v) in g.iter().enumerate() {
                        gg[i % c] += v * normed[i];
                    }
                });
                send(*bias, &|gb| {
                    for (i, v) in g.iter().enumerate() {
                        gb[i % c] += v;
                    }
                });
                send(*x, &|gx| {
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let nr = &normed[r * c..(r + 1) * c];
                        let dn: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let sum: f64 = dn.iter().sum();
                        let dot: f64 = dn.iter().zip(nr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] += inv / c as f64 * (c as f64 * dn[j] - sum - nr[j] * dot);
                        }
                    }
                });
            }
            Op::MaskedSoftmax { x } => {
                let c = out.last_dim();
                send(*x, &|gx| {
                    for (r, (yr, gr)) in out.data().chunks(c).zip(g.chunks(c)).enumerate() {
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::SplitHeads { x, heads } => {
                let (b, l, w) = dims3(self.value(*x).shape());
                let d = w / heads;
                send(*x, &|gx| {
                    for bi in 0..b {
                        for li in 0..l {
                            for h in 0..*heads {
                                let src = &g[((bi * heads + h) * l + li) * d..][..d];
                                add_into(&mut gx[(bi * l + li) * w + h * d..][..d], src);
                            }
                        }
                    }
                });
            }
            Op::MergeHeads { x, heads } => {
                let (bh, l, d) = dims3(self.value(*x).shape());
                let b = bh / heads;
                let w = heads * d;
                send(*x, &|gx| {
                    for bi in 0..b {
                        for h in 0..*heads {
                            for li in 0..l {
                                let src = &g[(bi * l + li) * w + h * d..][..d];
                                add_into(&mut gx[((bi * heads + h) * l + li) * d..][..d], src);
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => send(*x, &|gx| add_into(gx, g)),
            Op::GatherRows { x, rows } => {
                let (b, n, c) = dims3(self.value(*x).shape());
                send(*x, &|gx| {
                    for bi in 0..b {
                        for (k, &r) in rows.iter().enumerate() {
                            let src = &g[(bi * rows.len() + k) * c..][..c];
                            add_into(&mut gx[(bi * n + r) * c..][..c], src);
                        }
                    }
                });
            }
            Op::AddRowFlag { x, flag, rows } => {
                let c = out.last_dim();
                send(*x, &|gx| add_into(gx, g));
                send(*flag, &|gf| {
                    for (r, _) in rows.iter().enumerate().filter(|(_, &f)| f) {
                        add_into(gf, &g[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::Mse { x, target } => {
                let xv = self.value(*x);
                let k = 2.0 * g[0] / xv.numel() as f64;
                send(*x, &|gx| {
                    for ((o, a), b) in gx.iter_mut().zip(xv.data()).zip(target.data()) {
                        *o += k * (a - b);
                    }
                });
            }
            Op::Dot { x, weights } => send(*x, &|gx| {
                for (o, w) in gx.iter_mut().zip(weights.data()) {
                    *o += g[0] * w;
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    assert_eq!(s.len(), 3, "expected a rank-3 tensor, got {s:?}");
    (s[0], s[1], s[2])
}

/// Masked softmax over consecutive rows of length `c`; the mask repeats every
/// `r` rows. Masked entries come out exactly zero.
pub(crate) fn softmax_rows(x: &[f64], mask: &BoolMatrix, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row_i, (xr, or)) in x.chunks(c).zip(out.chunks_mut(c)).enumerate() {
        let m = mask.row(row_i % r);
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in xr.iter().enumerate() {
            let z = if m[j] { v } else { v + MASK_NEG };
            if z > max {
                max = z;
            }
        }
        let mut sum = 0.0;
        for j in 0..c {
            if m[j] {
                let e = (xr[j] - max).exp();
                or[j] = e;
                sum += e;
            }
        }
        for v in or.iter_mut() {
            *v /= sum;
        }
    }
    out
}
