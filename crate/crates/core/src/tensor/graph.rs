//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Values are computed
//! eagerly; [`Graph::backward`] walks the tape in reverse and accumulates gradients into
//! the leaves and into the [`ParamStore`] entries the graph read from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::array::{dot, gemm_acc, gemm_at_acc, gemm_bt_acc};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a> {
    /// Normalise with statistics of the current batch.
    Batch,
    /// Normalise with fixed running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const STD_NORM_EPS: f64 = 1e-8;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddTrailing(Var, Var),
    MulTrailing(Var, Var),
    Conv1d { x: Var, w: Var, b: Var, pad: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, window: usize },
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    ComplexAbs { re: Var, im: Var },
    Atan2 { y: Var, x: Var },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    Dropout { x: Var, mask: Vec<f64> },
    Sum(Var),
    Mean(Var),
    MeanAxis { x: Var, axis: usize },
    StdNorm { x: Var, centered: Vec<f64>, std: Vec<f64> },
    Cosine { a: Var, b: Var, eps: f64, na: Vec<f64>, nb: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let n = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, n, inner)
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Reads a parameter; gradients are accumulated back into the store unless frozen.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), !p.frozen)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// Batched matmul `[B×m×k]·[B×k×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err(format!("bmm {sa:?} x {sb:?}"));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm_acc(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![bs, m, n], out), Op::BatchMatMul(a, b), ng))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err(format!("bad permutation {perm:?} for {s:?}"));
        }
        let out = permute_data(self.value(x).data(), &s, perm);
        let shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Permute(x, perm.to_vec()), ng))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, name: &str) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{name} {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), data);
        let ng = self.ng(&[a, b]);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x).map(f);
        let ng = self.ng(&[x]);
        self.push(t, op, ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// GELU with the exact Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * std_normal_cdf(v), Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    fn trailing_check(&self, x: Var, b: Var, name: &str) -> Result<usize> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return shape_err(format!("{name}: {sb:?} is not a trailing shape of {sx:?}"));
        }
        Ok(self.value(b).len())
    }

    /// `x + b` where `b`'s shape equals the trailing dimensions of `x` (bias addition).
    pub fn add_trailing(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.trailing_check(x, b, "add_trailing")?;
        let bd = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % n])
            .collect();
        let t = Tensor::from_parts(self.shape(x).to_vec(), data);
        let ng = self.ng(&[x, b]);
        Ok(self.push(t, Op::AddTrailing(x, b), ng))
    }

    /// `x ⊙ s` where `s`'s shape equals the trailing dimensions of `x`.
    pub fn mul_trailing(&mut self, x: Var, s: Var) -> Result<Var> {
        let n = self.trailing_check(x, s, "mul_trailing")?;
        let sd = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sd[i % n])
            .collect();
        let t = Tensor::from_parts(self.shape(x).to_vec(), data);
        let ng = self.ng(&[x, s]);
        Ok(self.push(t, Op::MulTrailing(x, s), ng))
    }

    /// Affine map over the last axis: `x[.., in] · w[in×out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let din = *s.last().ok_or_else(|| Error::Shape("linear on scalar".into()))?;
        let rows = self.value(x).len() / din.max(1);
        let dout = self.shape(w).get(1).copied().unwrap_or(0);
        let x2 = self.reshape(x, &[rows, din])?;
        let mut y = self.matmul(x2, w)?;
        if let Some(b) = b {
            y = self.add_trailing(y, b)?;
        }
        let mut out_shape = s;
        *out_shape.last_mut().unwrap() = dout;
        self.reshape(y, &out_shape)
    }

    /// 1-D cross-correlation, stride 1. `x: [N×C_in×T]` (or `[C_in×T]`),
    /// `w: [C_out×C_in×K]`, `b: [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let squeeze = sx.len() == 2;
        let (n, cin, t) = match sx.as_slice() {
            [c, t] => (1, *c, *t),
            [n, c, t] => (*n, *c, *t),
            _ => return shape_err(format!("conv1d input {sx:?}")),
        };
        let sw = self.shape(w).to_vec();
        if sw.len() != 3 || sw[1] != cin || self.shape(b) != [sw[0]] {
            return shape_err(format!("conv1d weight {sw:?} / bias {:?} for input {sx:?}", self.shape(b)));
        }
        let (cout, k) = (sw[0], sw[2]);
        if k > t + 2 * pad {
            return shape_err(format!("conv1d kernel {k} longer than padded input {}", t + 2 * pad));
        }
        let tout = t + 2 * pad - k + 1;
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let geo = ConvGeom { cin, t, k, pad, tout };
        let mut out = vec![0.0; n * cout * tout];
        for (n0, n1) in geo.chunks(n) {
            let cols = (n1 - n0) * tout;
            let col = geo.im2col(xd, n0, n1);
            let mut y = vec![0.0; cout * cols];
            gemm_acc(wd, &col, &mut y, cout, cin * k, cols);
            for ni in n0..n1 {
                for co in 0..cout {
                    let src = &y[co * cols + (ni - n0) * tout..co * cols + (ni - n0 + 1) * tout];
                    let dst = &mut out[(ni * cout + co) * tout..(ni * cout + co + 1) * tout];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d = v + bd[co];
                    }
                }
            }
        }
        let shape = if squeeze { vec![cout, tout] } else { vec![n, cout, tout] };
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv1d { x, w, b, pad }, ng))
    }

    /// Non-overlapping pooling over the last axis.
    pub fn pool1d(&mut self, x: Var, kind: PoolKind, window: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let t = *s.last().ok_or_else(|| Error::Shape("pool on scalar".into()))?;
        if window == 0 || t % window != 0 {
            return shape_err(format!("pool window {window} does not divide length {t}"));
        }
        let rows = self.value(x).len() / t;
        let tout = t / window;
        let xd = self.value(x).data();
        let mut out = vec![0.0; rows * tout];
        let mut argmax = Vec::new();
        if kind == PoolKind::Max {
            argmax.reserve(rows * tout);
        }
        for r in 0..rows {
            for o in 0..tout {
                let seg = &xd[r * t + o * window..r * t + (o + 1) * window];
                match kind {
                    PoolKind::Max => {
                        // first maximal index wins
                        let mut best = 0;
                        for (i, &v) in seg.iter().enumerate() {
                            if v > seg[best] {
                                best = i;
                            }
                        }
                        out[r * tout + o] = seg[best];
                        argmax.push(r * t + o * window + best);
                    }
                    PoolKind::Avg => out[r * tout + o] = seg.iter().sum::<f64>() / window as f64,
                }
            }
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = tout;
        let ng = self.ng(&[x]);
        let op = match kind {
            PoolKind::Max => Op::MaxPool { x, argmax },
            PoolKind::Avg => Op::AvgPool { x, window },
        };
        Ok(self.push(Tensor::from_parts(shape, out), op, ng))
    }

    /// `√(re² + im² + eps)`.
    pub fn complex_abs(&mut self, re: Var, im: Var, eps: f64) -> Result<Var> {
        self.binary(re, im, |a, b| (a * a + b * b + eps).sqrt(), Op::ComplexAbs { re, im }, "complex_abs")
    }

    /// Four-quadrant arctangent in `(−π, π]`, with `atan2(0, 0) = 0` (the phase convention
    /// of the coherence metric).
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        self.binary(y, x, |y, x| crate::coherence::phase_of(x, y), Op::Atan2 { y, x }, "atan2")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return shape_err(format!("softmax axis {axis} for shape {s:?}"));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for k in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + k;
                let mx = (0..n).map(|i| xd[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..n {
                    let e = (xd[idx(i)] - mx).exp();
                    out[idx(i)] = e;
                    z += e;
                }
                for i in 0..n {
                    out[idx(i)] /= z;
                }
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::from_parts(s, out), Op::Softmax { x, axis }, ng))
    }

    /// Layer normalisation over the last axis with affine `g`, `b`.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap_or(&0);
        if self.shape(g) != [d] || self.shape(b) != [d] {
            return shape_err(format!("layer_norm affine shapes for {s:?}"));
        }
        let rows = self.value(x).len() / d.max(1);
        let (xd, gd, bd) = (self.value(x).data(), self.value(g).data(), self.value(b).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for i in 0..d {
                let h = (row[i] - mu) * inv;
                xhat[r * d + i] = h;
                out[r * d + i] = h * gd[i] + bd[i];
            }
        }
        let ng = self.ng(&[x, g, b]);
        Ok(self.push(Tensor::from_parts(s, out), Op::LayerNorm { x, g, b, xhat, inv_std }, ng))
    }

    /// Batch normalisation of `x: [N×C×T]` per channel `C`. With [`NormStats::Batch`] the
    /// returned pair holds the batch mean and (biased) variance per channel.
    pub fn batch_norm(
        &mut self,
        x: Var,
        g: Var,
        b: Var,
        stats: NormStats<'_>,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return shape_err(format!("batch_norm expects [N×C×T], got {s:?}"));
        }
        let (n, c, t) = (s[0], s[1], s[2]);
        if self.shape(g) != [c] || self.shape(b) != [c] {
            return shape_err(format!("batch_norm affine shapes for {s:?}"));
        }
        let xd = self.value(x).data();
        let (mean, var, batch) = match stats {
            NormStats::Batch => {
                let m = (n * t) as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut acc = 0.0;
                    for ni in 0..n {
                        acc += xd[(ni * c + ch) * t..(ni * c + ch + 1) * t].iter().sum::<f64>();
                    }
                    mean[ch] = acc / m;
                    let mut acc = 0.0;
                    for ni in 0..n {
                        acc += xd[(ni * c + ch) * t..(ni * c + ch + 1) * t]
                            .iter()
                            .map(|v| (v - mean[ch]) * (v - mean[ch]))
                            .sum::<f64>();
                    }
                    var[ch] = acc / m;
                }
                (mean, var, true)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return shape_err("batch_norm running statistics length".into());
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let (gd, bd) = (self.value(g).data(), self.value(b).data());
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for ni in 0..n {
            for ch in 0..c {
                for ti in 0..t {
                    let i = (ni * c + ch) * t + ti;
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = h * gd[ch] + bd[ch];
                }
            }
        }
        let ng = self.ng(&[x, g, b]);
        let v = self.push(
            Tensor::from_parts(s, out),
            Op::BatchNorm { x, g, b, xhat, inv_std, batch },
            ng,
        );
        Ok((v, batch.then_some((mean, var))))
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, seed: u64) -> Var {
        if !train || rate <= 0.0 {
            return x;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::from_parts(self.shape(x).to_vec(), data);
        let ng = self.ng(&[x]);
        self.push(t, Op::Dropout { x, mask }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / t.len() as f64;
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return shape_err(format!("mean axis {axis} for shape {s:?}"));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let xd = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let src = &xd[(o * n + i) * inner..(o * n + i + 1) * inner];
                for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let mut shape = s;
        shape.remove(axis);
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MeanAxis { x, axis }, ng))
    }

    /// `(x − mean) / (std + 1e-8)` along the last axis, population standard deviation.
    pub fn std_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::Shape("std_norm on scalar".into()))?;
        let rows = self.value(x).len() / d.max(1);
        let xd = self.value(x).data();
        let mut centered = vec![0.0; xd.len()];
        let mut std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let mut var = 0.0;
            for i in 0..d {
                let c = row[i] - mu;
                centered[r * d + i] = c;
                var += c * c;
            }
            let sd = (var / d as f64).sqrt();
            std[r] = sd;
            for i in 0..d {
                out[r * d + i] = centered[r * d + i] / (sd + STD_NORM_EPS);
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::from_parts(s, out), Op::StdNorm { x, centered, std }, ng))
    }

    /// Row-wise cosine similarity matrix `a[A×F]`, `b[B×F]` → `[A×B]`,
    /// `⟨a_i, b_j⟩ / (‖a_i‖‖b_j‖ + eps)`. A leading batch axis (`[N×A×F]`, `[N×B×F]` →
    /// `[N×A×B]`) pairs rows within each batch item only.
    pub fn cosine_matrix(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == sb.len()
            && (sa.len() == 2 || sa.len() == 3)
            && sa[sa.len() - 1] == sb[sb.len() - 1]
            && (sa.len() == 2 || sa[0] == sb[0]);
        if !ok {
            return shape_err(format!("cosine_matrix {sa:?} vs {sb:?}"));
        }
        let nbatch = if sa.len() == 3 { sa[0] } else { 1 };
        let (ra, rb, f) = (sa[sa.len() - 2], sb[sb.len() - 2], sa[sa.len() - 1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let norm = |d: &[f64], i: usize| dot(&d[i * f..(i + 1) * f], &d[i * f..(i + 1) * f]).sqrt();
        let na: Vec<f64> = (0..nbatch * ra).map(|i| norm(ad, i)).collect();
        let nb: Vec<f64> = (0..nbatch * rb).map(|j| norm(bd, j)).collect();
        let mut out = vec![0.0; nbatch * ra * rb];
        for n in 0..nbatch {
            for i in n * ra..(n + 1) * ra {
                for j in n * rb..(n + 1) * rb {
                    let d = dot(&ad[i * f..(i + 1) * f], &bd[j * f..(j + 1) * f]);
                    out[i * rb + (j - n * rb)] = d / (na[i] * nb[j] + eps);
                }
            }
        }
        let shape = if sa.len() == 3 { vec![nbatch, ra, rb] } else { vec![ra, rb] };
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Cosine { a, b, eps, na, nb }, ng))
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to `store`
    /// (frozen parameters are skipped); leaf gradients are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return shape_err(format!("backward needs a scalar loss, got {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[idx]) {
                let p = store.get_mut(*id);
                if !p.frozen {
                    p.grad.add_assign(g);
                }
            }
        }
        Ok(Grads { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.acc_with(grads, *a, |da| gemm_bt_acc(gd, bd, da, m, n, k));
                self.acc_with(grads, *b, |db| gemm_at_acc(ad, gd, db, m, k, n));
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.acc_with(grads, *a, |da| {
                    for i in 0..bs {
                        gemm_bt_acc(&gd[i * m * n..(i + 1) * m * n], &bd[i * k * n..(i + 1) * k * n], &mut da[i * m * k..(i + 1) * m * k], m, n, k);
                    }
                });
                self.acc_with(grads, *b, |db| {
                    for i in 0..bs {
                        gemm_at_acc(&ad[i * m * k..(i + 1) * m * k], &gd[i * m * n..(i + 1) * m * n], &mut db[i * k * n..(i + 1) * k * n], m, k, n);
                    }
                });
            }
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let back = permute_data(gd, y.shape(), &inv);
                self.acc(grads, *x, Tensor::from_parts(self.shape(*x).to_vec(), back));
            }
            Op::Reshape(x) => {
                self.acc(grads, *x, Tensor::from_parts(self.shape(*x).to_vec(), gd.to_vec()));
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.acc_with(grads, *a, |da| {
                    for i in 0..da.len() {
                        da[i] += gd[i] * bd[i];
                    }
                });
                self.acc_with(grads, *b, |db| {
                    for i in 0..db.len() {
                        db[i] += gd[i] * ad[i];
                    }
                });
            }
            Op::Scale(x, c) => self.acc(grads, *x, g.map(|v| v * c)),
            Op::AddScalar(x) => self.acc(grads, *x, g.clone()),
            Op::AddTrailing(x, b) => {
                self.acc(grads, *x, g.clone());
                let n = self.value(*b).len();
                self.acc_with(grads, *b, |db| {
                    for (i, v) in gd.iter().enumerate() {
                        db[i % n] += v;
                    }
                });
            }
            Op::MulTrailing(x, s) => {
                let n = self.value(*s).len();
                let (xd, sd) = (self.value(*x).data(), self.value(*s).data());
                self.acc_with(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += gd[i] * sd[i % n];
                    }
                });
                self.acc_with(grads, *s, |ds| {
                    for i in 0..gd.len() {
                        ds[i % n] += gd[i] * xd[i];
                    }
                });
            }
            Op::Conv1d { x, w, b, pad } => {
                let sx = self.shape(*x);
                let (n, cin, t) = if sx.len() == 2 { (1, sx[0], sx[1]) } else { (sx[0], sx[1], sx[2]) };
                let sw = self.shape(*w);
                let (cout, k) = (sw[0], sw[2]);
                let tout = t + 2 * pad - k + 1;
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                self.acc_with(grads, *b, |db| {
                    for ni in 0..n {
                        for co in 0..cout {
                            db[co] += gd[(ni * cout + co) * tout..(ni * cout + co + 1) * tout].iter().sum::<f64>();
                        }
                    }
                });
                let geo = ConvGeom { cin, t, k, pad: *pad, tout };
                let ck = cin * k;
                let mut dw_acc = vec![0.0; cout * ck];
                let mut dx_acc = vec![0.0; n * cin * t];
                for (n0, n1) in geo.chunks(n) {
                    let cols = (n1 - n0) * tout;
                    // gradient rearranged to [cout × (samples·tout)]
                    let mut gcol = vec![0.0; cout * cols];
                    for ni in n0..n1 {
                        for co in 0..cout {
                            gcol[co * cols + (ni - n0) * tout..co * cols + (ni - n0 + 1) * tout]
                                .copy_from_slice(&gd[(ni * cout + co) * tout..(ni * cout + co + 1) * tout]);
                        }
                    }
                    let col = geo.im2col(xd, n0, n1);
                    gemm_bt_acc(&gcol, &col, &mut dw_acc, cout, cols, ck);
                    let mut dcol = vec![0.0; ck * cols];
                    gemm_at_acc(wd, &gcol, &mut dcol, cout, ck, cols);
                    geo.col2im(&dcol, &mut dx_acc, n0, n1);
                }
                self.acc_with(grads, *w, |dw| dw.iter_mut().zip(&dw_acc).for_each(|(d, v)| *d += v));
                self.acc_with(grads, *x, |dx| dx.iter_mut().zip(&dx_acc).for_each(|(d, v)| *d += v));
            }
            Op::MaxPool { x, argmax } => {
                self.acc_with(grads, *x, |dx| {
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += gd[o];
                    }
                });
            }
            Op::AvgPool { x, window } => {
                let w = *window;
                self.acc_with(grads, *x, |dx| {
                    for (i, d) in dx.iter_mut().enumerate() {
                        *d += gd[i / w] / w as f64;
                    }
                });
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                self.acc_with(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        if xd[i] > 0.0 {
                            dx[i] += gd[i];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                self.acc_with(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        let v = xd[i];
                        dx[i] += gd[i] * (std_normal_cdf(v) + v * std_normal_pdf(v));
                    }
                });
            }
            Op::Tanh(x) => {
                let yd = y.data();
                self.acc_with(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += gd[i] * (1.0 - yd[i] * yd[i]);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yd = y.data();
                self.acc_with(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += gd[i] * yd[i] * (1.0 - yd[i]);
                    }
                });
            }
            Op::Square(x) => {
                let xd = self.value(*x).data();
                self.acc_with(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += 2.0 * gd[i] * xd[i];
                    }
                });
            }
            Op::ComplexAbs { re, im } => {
                let (rd, id, yd) = (self.value(*re).data(), self.value(*im).data(), y.data());
                self.acc_with(grads, *re, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * rd[i] / yd[i];
                    }
                });
                self.acc_with(grads, *im, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * id[i] / yd[i];
                    }
                });
            }
            Op::Atan2 { y: yv, x } => {
                let (yd, xd) = (self.value(*yv).data(), self.value(*x).data());
                let denom = |i: usize| xd[i] * xd[i] + yd[i] * yd[i];
                self.acc_with(grads, *yv, |d| {
                    for i in 0..d.len() {
                        let r = denom(i);
                        if r > 0.0 {
                            d[i] += gd[i] * xd[i] / r;
                        }
                    }
                });
                self.acc_with(grads, *x, |d| {
                    for i in 0..d.len() {
                        let r = denom(i);
                        if r > 0.0 {
                            d[i] -= gd[i] * yd[i] / r;
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(y.shape(), *axis);
                let yd = y.data();
                self.acc_with(grads, *x, |dx| {
                    for o in 0..outer {
                        for k in 0..inner {
                            let idx = |i: usize| (o * n + i) * inner + k;
                            let s: f64 = (0..n).map(|i| gd[idx(i)] * yd[idx(i)]).sum();
                            for i in 0..n {
                                dx[idx(i)] += yd[idx(i)] * (gd[idx(i)] - s);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, g: gv, b, xhat, inv_std } => {
                let d = *y.shape().last().unwrap();
                let rows = y.len() / d;
                let gam = self.value(*gv).data();
                self.acc_with(grads, *gv, |dg| {
                    for i in 0..gd.len() {
                        dg[i % d] += gd[i] * xhat[i];
                    }
                });
                self.acc_with(grads, *b, |db| {
                    for i in 0..gd.len() {
                        db[i % d] += gd[i];
                    }
                });
                self.acc_with(grads, *x, |dx| {
                    for r in 0..rows {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for i in 0..d {
                            let dh = gd[r * d + i] * gam[i];
                            s1 += dh;
                            s2 += dh * xhat[r * d + i];
                        }
                        for i in 0..d {
                            let dh = gd[r * d + i] * gam[i];
                            dx[r * d + i] += inv_std[r] / d as f64 * (d as f64 * dh - s1 - xhat[r * d + i] * s2);
                        }
                    }
                });
            }
            Op::BatchNorm { x, g: gv, b, xhat, inv_std, batch } => {
                let s = y.shape();
                let (n, c, t) = (s[0], s[1], s[2]);
                let gam = self.value(*gv).data();
                let ch_of = |i: usize| (i / t) % c;
                self.acc_with(grads, *gv, |dg| {
                    for i in 0..gd.len() {
                        dg[ch_of(i)] += gd[i] * xhat[i];
                    }
                });
                self.acc_with(grads, *b, |db| {
                    for i in 0..gd.len() {
                        db[ch_of(i)] += gd[i];
                    }
                });
                self.acc_with(grads, *x, |dx| {
                    if *batch {
                        let m = (n * t) as f64;
                        let mut s1 = vec![0.0; c];
                        let mut s2 = vec![0.0; c];
                        for i in 0..gd.len() {
                            let ch = ch_of(i);
                            let dh = gd[i] * gam[ch];
                            s1[ch] += dh;
                            s2[ch] += dh * xhat[i];
                        }
                        for i in 0..gd.len() {
                            let ch = ch_of(i);
                            let dh = gd[i] * gam[ch];
                            dx[i] += inv_std[ch] / m * (m * dh - s1[ch] - xhat[i] * s2[ch]);
                        }
                    } else {
                        for i in 0..gd.len() {
                            let ch = ch_of(i);
                            dx[i] += gd[i] * gam[ch] * inv_std[ch];
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.acc_with(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += gd[i] * mask[i];
                    }
                });
            }
            Op::Sum(x) => {
                let v = gd[0];
                self.acc_with(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += v));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let v = gd[0] / n;
                self.acc_with(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += v));
            }
            Op::MeanAxis { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                self.acc_with(grads, *x, |dx| {
                    for o in 0..outer {
                        for i in 0..n {
                            for k in 0..inner {
                                dx[(o * n + i) * inner + k] += gd[o * inner + k] / n as f64;
                            }
                        }
                    }
                });
            }
            Op::StdNorm { x, centered, std } => {
                let d = *y.shape().last().unwrap();
                let rows = y.len() / d;
                self.acc_with(grads, *x, |dx| {
                    for r in 0..rows {
                        let sd = std[r];
                        let s = sd + STD_NORM_EPS;
                        let row_g = &gd[r * d..(r + 1) * d];
                        let row_c = &centered[r * d..(r + 1) * d];
                        let gmean = row_g.iter().sum::<f64>() / d as f64;
                        let gc = dot(row_g, row_c);
                        let k = if sd > 0.0 { gc / (d as f64 * sd * s * s) } else { 0.0 };
                        for i in 0..d {
                            dx[r * d + i] += (row_g[i] - gmean) / s - row_c[i] * k;
                        }
                    }
                });
            }
            Op::Cosine { a, b, eps, na, nb } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let sa = self.shape(*a);
                let f = sa[sa.len() - 1];
                let (ra, rb) = (sa[sa.len() - 2], self.shape(*b)[sa.len() - 2]);
                let nbatch = na.len() / ra;
                let yd = y.data();
                // visits (i, j) pairs of the same batch item; `o` indexes the output
                let pairs = || {
                    (0..nbatch).flat_map(move |n| {
                        (n * ra..(n + 1) * ra).flat_map(move |i| (n * rb..(n + 1) * rb).map(move |j| (i, j, i * rb + j - n * rb)))
                    })
                };
                self.acc_with(grads, *a, |da| {
                    for (i, j, o) in pairs() {
                        let gij = gd[o];
                        if gij == 0.0 {
                            continue;
                        }
                        let den = na[i] * nb[j] + eps;
                        let c1 = gij / den;
                        let c2 = if na[i] > 0.0 { gij * yd[o] * nb[j] / (den * na[i]) } else { 0.0 };
                        for q in 0..f {
                            da[i * f + q] += c1 * bd[j * f + q] - c2 * ad[i * f + q];
                        }
                    }
                });
                self.acc_with(grads, *b, |db| {
                    for (i, j, o) in pairs() {
                        let gij = gd[o];
                        if gij == 0.0 {
                            continue;
                        }
                        let den = na[i] * nb[j] + eps;
                        let c1 = gij / den;
                        let c2 = if nb[j] > 0.0 { gij * yd[o] * na[i] / (den * nb[j]) } else { 0.0 };
                        for q in 0..f {
                            db[j * f + q] += c1 * ad[i * f + q] - c2 * bd[j * f + q];
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

/// Layout of a stride-1 convolution lowered to a matrix product.
struct ConvGeom {
    cin: usize,
    t: usize,
    k: usize,
    pad: usize,
    tout: usize,
}

impl ConvGeom {
    /// Sample ranges whose unfolded input stays around a million values.
    fn chunks(&self, n: usize) -> Vec<(usize, usize)> {
        let per = (self.cin * self.k * self.tout).max(1);
        let step = (1 << 20) / per;
        let step = step.max(1);
        (0..n).step_by(step).map(|s| (s, (s + step).min(n))).collect()
    }

    /// `[cin·k × (samples·tout)]` patch matrix for samples `n0..n1`.
    fn im2col(&self, xd: &[f64], n0: usize, n1: usize) -> Vec<f64> {
        let cols = (n1 - n0) * self.tout;
        let mut col = vec![0.0; self.cin * self.k * cols];
        for ni in n0..n1 {
            for ci in 0..self.cin {
                let xrow = &xd[(ni * self.cin + ci) * self.t..(ni * self.cin + ci + 1) * self.t];
                for kk in 0..self.k {
                    let (lo, hi) = conv_range(kk, self.pad, self.t, self.tout);
                    let base = (ci * self.k + kk) * cols + (ni - n0) * self.tout;
                    let off = kk as isize - self.pad as isize;
                    for tt in lo..hi {
                        col[base + tt] = xrow[(tt as isize + off) as usize];
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &[f64], dx: &mut [f64], n0: usize, n1: usize) {
        let cols = (n1 - n0) * self.tout;
        for ni in n0..n1 {
            for ci in 0..self.cin {
                let xrow = &mut dx[(ni * self.cin + ci) * self.t..(ni * self.cin + ci + 1) * self.t];
                for kk in 0..self.k {
                    let (lo, hi) = conv_range(kk, self.pad, self.t, self.tout);
                    let base = (ci * self.k + kk) * cols + (ni - n0) * self.tout;
                    let off = kk as isize - self.pad as isize;
                    for tt in lo..hi {
                        xrow[(tt as isize + off) as usize] += dcol[base + tt];
                    }
                }
            }
        }
    }
}

/// Output index range `[lo, hi)` for which input position `t + kk - pad` is in bounds.
fn conv_range(kk: usize, pad: usize, t: usize, tout: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kk);
    let hi = (t + pad).saturating_sub(kk).min(tout);
    (lo, hi.max(lo))
}

fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let nd = shape.len();
    let mut strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..src.len() {
        out.push(src[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += out_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= out_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}
