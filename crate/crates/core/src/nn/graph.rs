//! Tape-based reverse-mode autodiff over NCHW tensors.
//!
//! A [`Graph`] records every operation of one forward pass together with
//! whatever the backward pass needs (patch matrices are recomputed instead
//! of stored). Parameters are read from a borrowed [`ParamStore`]; gradients
//! come back as [`Grads`] and batch-norm running statistics as
//! [`BufferUpdate`]s, so the store itself is never mutated by a pass.
//!
//! Batch work is split into fixed chunks of samples and partial weight
//! gradients are summed in chunk order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use super::kernels::{col2im3, gemm, im2col3, Mat};
use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Probability clamp inside the cross-entropy logarithms.
pub const PROB_EPS: f64 = 1e-7;
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses batch statistics and reports running-stat updates.
    Train,
    /// Batch-norm uses running statistics; samples are independent.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferUpdate {
    pub id: ParamId,
    pub data: Vec<f64>,
}

enum Op {
    Input,
    Conv {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        k: usize,
    },
    UpConv {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        f: usize,
    },
    BatchNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Concat(Var, Var),
    Add(Var, Var),
    Gate {
        x: Var,
        alpha: Var,
    },
    Bce {
        logits: Var,
        dlogits: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    mode: Mode,
    nodes: Vec<Node>,
    updates: Vec<BufferUpdate>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Graph {
            store,
            mode,
            nodes: Vec::new(),
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Batch-norm running statistics computed by train-mode passes.
    pub fn take_updates(&mut self) -> Vec<BufferUpdate> {
        std::mem::take(&mut self.updates)
    }

    /// Hash of the piecewise-linear branch taken by every ReLU and max-pool
    /// node. Two passes with equal hashes lie on the same smooth piece of the
    /// network function.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(_) => node.value.data().iter().for_each(|&v| eat((v > 0.0) as u64)),
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&a| eat(a as u64)),
                Op::Bce { dlogits, .. } => dlogits.iter().for_each(|&d| eat((d == 0.0) as u64)),
                _ => {}
            }
        }
        h
    }

    /// Same-padded convolution with a `cout × cin × k × k` kernel, k ∈ {1, 3}.
    pub fn conv(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Var {
        let xin = &self.nodes[x.0].value;
        let [n, c, h, wd] = xin.shape();
        let wp = self.store.param(w);
        let (cout, k) = (wp.shape[0], wp.shape[2]);
        assert_eq!(wp.shape[1], c, "conv `{}` input channels", wp.name);
        assert!(k == 1 || k == 3, "conv kernel must be 1 or 3");
        let (kk, hw) = (c * k * k, h * wd);
        let wdata = &wp.data;
        let bias = b.map(|b| self.store.get(b));
        let mut out = Tensor::zeros([n, cout, h, wd]);
        out.data_mut()
            .par_chunks_mut(cout * hw)
            .enumerate()
            .for_each_init(
                || vec![0.0; if k == 3 { kk * hw } else { 0 }],
                |cols, (i, o)| {
                    let xs = xin.sample(i);
                    let bm: &[f64] = if k == 3 {
                        im2col3(xs, c, h, wd, cols);
                        cols
                    } else {
                        xs
                    };
                    gemm(Mat::new(wdata, cout, kk), Mat::new(bm, kk, hw), 0.0, o);
                    if let Some(bias) = bias {
                        for (co, row) in o.chunks_mut(hw).enumerate() {
                            row.iter_mut().for_each(|v| *v += bias[co]);
                        }
                    }
                },
            );
        self.push(out, Op::Conv { x, w, b, k })
    }

    /// Transposed convolution with kernel = stride = `f` (learned upsampling),
    /// kernel laid out `cin × cout × f × f`.
    pub fn upconv(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Var {
        let xin = &self.nodes[x.0].value;
        let [n, c, h, wd] = xin.shape();
        let wp = self.store.param(w);
        let (cout, f) = (wp.shape[1], wp.shape[2]);
        assert_eq!(wp.shape[0], c, "upconv `{}` input channels", wp.name);
        let (rows, hw) = (cout * f * f, h * wd);
        let (oh, ow) = (h * f, wd * f);
        let wdata = &wp.data;
        let bias = b.map(|b| self.store.get(b));
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        out.data_mut()
            .par_chunks_mut(cout * oh * ow)
            .enumerate()
            .for_each_init(
                || vec![0.0; rows * hw],
                |y, (i, o)| {
                    gemm(Mat::t(wdata, rows, c), Mat::new(xin.sample(i), c, hw), 0.0, y);
                    for co in 0..cout {
                        let b = bias.map_or(0.0, |b| b[co]);
                        for fi in 0..f {
                            for fj in 0..f {
                                let src = &y[((co * f + fi) * f + fj) * hw..][..hw];
                                for yy in 0..h {
                                    let orow = &mut o[(co * oh + yy * f + fi) * ow..][..ow];
                                    for xx in 0..wd {
                                        orow[xx * f + fj] = src[yy * wd + xx] + b;
                                    }
                                }
                            }
                        }
                    }
                },
            );
        self.push(out, Op::UpConv { x, w, b, f })
    }

    pub fn batch_norm(&mut self, x: Var, bn: BnParams) -> Var {
        let xin = &self.nodes[x.0].value;
        let [n, c, h, w] = xin.shape();
        let hw = h * w;
        let m = (n * hw) as f64;
        let gamma = self.store.get(bn.gamma);
        let beta = self.store.get(bn.beta);
        let batch_stats = self.mode == Mode::Train;
        let mut out = Tensor::zeros(xin.shape());
        let mut xhat = vec![0.0; xin.len()];
        let mut inv_std = vec![0.0; c];
        let mut new_mean = self.store.get(bn.mean).to_vec();
        let mut new_var = self.store.get(bn.var).to_vec();
        for ch in 0..c {
            let idx = |i: usize| (i * c + ch) * hw;
            let (mean, inv) = if batch_stats {
                let mut s = 0.0;
                for i in 0..n {
                    s += xin.data()[idx(i)..idx(i) + hw].iter().sum::<f64>();
                }
                let mean = s / m;
                let mut ss = 0.0;
                for i in 0..n {
                    ss += xin.data()[idx(i)..idx(i) + hw]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = ss / m;
                let unbiased = if m > 1.0 { ss / (m - 1.0) } else { var };
                new_mean[ch] = (1.0 - BN_MOMENTUM) * new_mean[ch] + BN_MOMENTUM * mean;
                new_var[ch] = (1.0 - BN_MOMENTUM) * new_var[ch] + BN_MOMENTUM * unbiased;
                (mean, 1.0 / (var + BN_EPS).sqrt())
            } else {
                let mean = self.store.get(bn.mean)[ch];
                (mean, 1.0 / (self.store.get(bn.var)[ch] + BN_EPS).sqrt())
            };
            inv_std[ch] = inv;
            for i in 0..n {
                let r = idx(i)..idx(i) + hw;
                for ((o, xh), &v) in out.data_mut()[r.clone()]
                    .iter_mut()
                    .zip(&mut xhat[r.clone()])
                    .zip(&xin.data()[r])
                {
                    *xh = (v - mean) * inv;
                    *o = gamma[ch] * *xh + beta[ch];
                }
            }
        }
        if batch_stats {
            self.updates.push(BufferUpdate {
                id: bn.mean,
                data: new_mean,
            });
            self.updates.push(BufferUpdate {
                id: bn.var,
                data: new_var,
            });
        }
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma: bn.gamma,
                beta: bn.beta,
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push(out, Op::Sigmoid(x))
    }

    /// 2×2 max pooling with stride 2; H and W must be even.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xin = &self.nodes[x.0].value;
        let [n, c, h, w] = xin.shape();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = vec![0u32; out.len()];
        let src = xin.data();
        for plane in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = plane * h * w;
                    let cands = [
                        base + 2 * y * w + 2 * xx,
                        base + 2 * y * w + 2 * xx + 1,
                        base + (2 * y + 1) * w + 2 * xx,
                        base + (2 * y + 1) * w + 2 * xx + 1,
                    ];
                    let mut best = cands[0];
                    for &cnd in &cands[1..] {
                        if src[cnd] > src[best] {
                            best = cnd;
                        }
                    }
                    let o = (plane * oh + y) * ow + xx;
                    out.data_mut()[o] = src[best];
                    argmax[o] = best as u32;
                }
            }
        }
        self.push(out, Op::MaxPool { x, argmax })
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let [n, ca, h, w] = ta.shape();
        let [nb, cb, hb, wb] = tb.shape();
        assert_eq!((n, h, w), (nb, hb, wb), "concat spatial/batch dims");
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for i in 0..n {
            data.extend_from_slice(ta.sample(i));
            data.extend_from_slice(tb.sample(i));
        }
        let out = Tensor::from_vec([n, ca + cb, h, w], data).expect("concat size");
        self.push(out, Op::Concat(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.nodes[a.0].value.clone();
        let tb = &self.nodes[b.0].value;
        assert_eq!(out.shape(), tb.shape(), "add shapes");
        out.add_assign(tb);
        self.push(out, Op::Add(a, b))
    }

    /// Multiply `x` (N×C×H×W) by a one-channel map `alpha` (N×1×H×W).
    pub fn gate(&mut self, x: Var, alpha: Var) -> Var {
        let (tx, ta) = (&self.nodes[x.0].value, &self.nodes[alpha.0].value);
        let [n, c, h, w] = tx.shape();
        assert_eq!(ta.shape(), [n, 1, h, w], "gate map shape");
        let hw = h * w;
        let mut out = tx.clone();
        for i in 0..n {
            let a = ta.sample(i);
            for ch in 0..c {
                let row = &mut out.data_mut()[(i * c + ch) * hw..][..hw];
                row.iter_mut().zip(a).for_each(|(v, a)| *v *= a);
            }
        }
        self.push(out, Op::Gate { x, alpha })
    }

    /// Class-weighted binary cross-entropy from logits, averaged over all
    /// elements. Probabilities are clamped to [ε, 1-ε] inside the logs;
    /// clamped elements get no gradient.
    pub fn weighted_bce(&mut self, logits: Var, target: &[f64], w_pos: f64, w_neg: f64) -> Var {
        let z = &self.nodes[logits.0].value;
        assert_eq!(z.len(), target.len(), "loss target length");
        let m = z.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; z.len()];
        for ((d, &zi), &y) in dlogits.iter_mut().zip(z.data()).zip(target) {
            let p = sigmoid(zi);
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            loss -= w_pos * y * pc.ln() + w_neg * (1.0 - y) * (1.0 - pc).ln();
            if pc == p {
                *d = (-w_pos * y * (1.0 - p) + w_neg * (1.0 - y) * p) / m;
            }
        }
        let out = Tensor::from_vec([1, 1, 1, 1], vec![loss / m]).expect("scalar");
        self.push(out, Op::Bce { logits, dlogits })
    }

    /// Reverse pass from a scalar node; returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut pgrads = Grads::new(self.store.len());
        grads[loss.0] = Some(Tensor::from_vec([1, 1, 1, 1], vec![1.0]).expect("scalar"));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Conv { x, w, b, k } => {
                    let dx = self.conv_backward(*x, *w, *b, *k, &g, &mut pgrads);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::UpConv { x, w, b, f } => {
                    let dx = self.upconv_backward(*x, *w, *b, *f, &g, &mut pgrads);
                    accumulate(&mut grads, *x, dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let dx = self.bn_backward(*gamma, *beta, xhat, inv_std, *batch_stats, &g, &mut pgrads);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = Tensor::zeros(self.nodes[x.0].value.shape());
                    for (&a, &gv) in argmax.iter().zip(g.data()) {
                        dx.data_mut()[a as usize] += gv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat(a, b) => {
                    let sa = self.nodes[a.0].value.shape();
                    let sb = self.nodes[b.0].value.shape();
                    let (la, lb) = (sa[1] * sa[2] * sa[3], sb[1] * sb[2] * sb[3]);
                    let mut da = Vec::with_capacity(la * sa[0]);
                    let mut db = Vec::with_capacity(lb * sb[0]);
                    for s in g.data().chunks(la + lb) {
                        da.extend_from_slice(&s[..la]);
                        db.extend_from_slice(&s[la..]);
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(sa, da).expect("concat grad"));
                    accumulate(&mut grads, *b, Tensor::from_vec(sb, db).expect("concat grad"));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Gate { x, alpha } => {
                    let tx = &self.nodes[x.0].value;
                    let ta = &self.nodes[alpha.0].value;
                    let [n, c, h, w] = tx.shape();
                    let hw = h * w;
                    let mut dx = g.clone();
                    let mut da = Tensor::zeros(ta.shape());
                    for i in 0..n {
                        let a = ta.sample(i);
                        for ch in 0..c {
                            let off = (i * c + ch) * hw;
                            let gx = &g.data()[off..off + hw];
                            let xv = &tx.data()[off..off + hw];
                            let dar = &mut da.data_mut()[i * hw..(i + 1) * hw];
                            for p in 0..hw {
                                dar[p] += gx[p] * xv[p];
                            }
                            dx.data_mut()[off..off + hw]
                                .iter_mut()
                                .zip(a)
                                .for_each(|(d, a)| *d *= a);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *alpha, da);
                }
                Op::Bce { logits, dlogits } => {
                    let s = g.data()[0];
                    let shape = self.nodes[logits.0].value.shape();
                    let d = dlogits.iter().map(|v| v * s).collect();
                    accumulate(&mut grads, *logits, Tensor::from_vec(shape, d).expect("loss grad"));
                }
            }
        }
        pgrads
    }

    fn conv_backward(
        &self,
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        k: usize,
        g: &Tensor,
        pgrads: &mut Grads,
    ) -> Option<Tensor> {
        let xin = &self.nodes[x.0].value;
        let [n, c, h, wd] = xin.shape();
        let wp = self.store.param(w);
        let cout = wp.shape[0];
        let (kk, hw) = (c * k * k, h * wd);
        let wdata = &wp.data;
        let need_dx = !matches!(self.nodes[x.0].op, Op::Input);
        let mut dx = Tensor::zeros(xin.shape());
        let partials: Vec<Vec<f64>> = dx
            .data_mut()
            .par_chunks_mut(CHUNK * c * hw)
            .enumerate()
            .map(|(ci, dxc)| {
                let mut dw = vec![0.0; cout * kk];
                let mut cols = vec![0.0; if k == 3 { kk * hw } else { 0 }];
                let mut dcols = vec![0.0; if k == 3 && need_dx { kk * hw } else { 0 }];
                for (j, dxi) in dxc.chunks_mut(c * hw).enumerate() {
                    let i = ci * CHUNK + j;
                    let go = g.sample(i);
                    let xs = xin.sample(i);
                    let bm: &[f64] = if k == 3 {
                        im2col3(xs, c, h, wd, &mut cols);
                        &cols
                    } else {
                        xs
                    };
                    gemm(Mat::new(go, cout, hw), Mat::t(bm, hw, kk), 1.0, &mut dw);
                    if !need_dx {
                        continue;
                    }
                    let wt = Mat::t(wdata, kk, cout);
                    if k == 3 {
                        gemm(wt, Mat::new(go, cout, hw), 0.0, &mut dcols);
                        col2im3(&dcols, c, h, wd, dxi);
                    } else {
                        gemm(wt, Mat::new(go, cout, hw), 0.0, dxi);
                    }
                }
                dw
            })
            .collect();
        for p in &partials {
            pgrads.accumulate(w, p);
        }
        if let Some(b) = b {
            let db = pgrads.slot(b, cout);
            for i in 0..n {
                for (co, row) in g.sample(i).chunks(hw).enumerate() {
                    db[co] += row.iter().sum::<f64>();
                }
            }
        }
        need_dx.then_some(dx)
    }

    fn upconv_backward(
        &self,
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        f: usize,
        g: &Tensor,
        pgrads: &mut Grads,
    ) -> Tensor {
        let xin = &self.nodes[x.0].value;
        let [_, c, h, wd] = xin.shape();
        let wp = self.store.param(w);
        let cout = wp.shape[1];
        let (rows, hw) = (cout * f * f, h * wd);
        let (oh, ow) = (h * f, wd * f);
        let wdata = &wp.data;
        let mut dx = Tensor::zeros(xin.shape());
        let partials: Vec<(Vec<f64>, Vec<f64>)> = dx
            .data_mut()
            .par_chunks_mut(CHUNK * c * hw)
            .enumerate()
            .map(|(ci, dxc)| {
                let mut dw = vec![0.0; c * rows];
                let mut db = vec![0.0; cout];
                let mut dy = vec![0.0; rows * hw];
                for (j, dxi) in dxc.chunks_mut(c * hw).enumerate() {
                    let i = ci * CHUNK + j;
                    let go = g.sample(i);
                    for co in 0..cout {
                        for fi in 0..f {
                            for fj in 0..f {
                                let dst = &mut dy[((co * f + fi) * f + fj) * hw..][..hw];
                                for yy in 0..h {
                                    let grow = &go[(co * oh + yy * f + fi) * ow..][..ow];
                                    for xx in 0..wd {
                                        dst[yy * wd + xx] = grow[xx * f + fj];
                                    }
                                }
                            }
                        }
                        db[co] += go[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
                    }
                    gemm(Mat::new(xin.sample(i), c, hw), Mat::t(&dy, hw, rows), 1.0, &mut dw);
                    gemm(Mat::new(wdata, c, rows), Mat::new(&dy, rows, hw), 0.0, dxi);
                }
                (dw, db)
            })
            .collect();
        for (dw, db) in &partials {
            pgrads.accumulate(w, dw);
            if let Some(b) = b {
                pgrads.accumulate(b, db);
            }
        }
        dx
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_backward(
        &self,
        gamma: ParamId,
        beta: ParamId,
        xhat: &[f64],
        inv_std: &[f64],
        batch_stats: bool,
        g: &Tensor,
        pgrads: &mut Grads,
    ) -> Tensor {
        let [n, c, h, w] = g.shape();
        let hw = h * w;
        let m = (n * hw) as f64;
        let gm = self.store.get(gamma);
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut dx = Tensor::zeros(g.shape());
        for ch in 0..c {
            let ranges = (0..n).map(|i| (i * c + ch) * hw..(i * c + ch + 1) * hw);
            let (mut sg, mut sgx) = (0.0, 0.0);
            for r in ranges.clone() {
                for (&gv, &xh) in g.data()[r.clone()].iter().zip(&xhat[r]) {
                    sg += gv;
                    sgx += gv * xh;
                }
            }
            dgamma[ch] = sgx;
            dbeta[ch] = sg;
            let scale = gm[ch] * inv_std[ch];
            for r in ranges {
                let gs = &g.data()[r.clone()];
                let xs = &xhat[r.clone()];
                let out = &mut dx.data_mut()[r];
                for p in 0..hw {
                    out[p] = if batch_stats {
                        scale * (gs[p] - sg / m - xs[p] * sgx / m)
                    } else {
                        scale * gs[p]
                    };
                }
            }
        }
        pgrads.accumulate(gamma, &dgamma);
        pgrads.accumulate(beta, &dbeta);
        dx
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Write batch-norm running statistics back into the store.
pub fn apply_updates(store: &mut ParamStore, updates: Vec<BufferUpdate>) {
    for u in updates {
        store.get_mut(u.id).copy_from_slice(&u.data);
    }
}
