//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the tape is a
//! topological order by construction and the reverse sweep visits each node
//! exactly once.

use std::collections::HashMap;

use crate::array::{numel, strides, NdArray};
use crate::error::{invalid, shape_err, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    stride: (usize, usize),
    pad: (usize, usize),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvT2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Tanh(Var),
    Atanh(Var),
    Gelu(Var),
    Sqrt(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<T>,
        scale: T,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    BroadcastTo(Var),
    Sum(Var),
    SumAxis(Var, usize),
    Mean(Var),
    SteRound(Var),
}

struct Node<T> {
    value: NdArray<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    grad_enabled: bool,
    backward_done: bool,
    param_vars: HashMap<(ParamId, bool), Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// strided helpers

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to `out`, zero on broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

/// Calls `f(out_index, offset_a, offset_b)` over every element of `out`.
fn for_each2(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let r = out.len();
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let total = numel(out);
    if total == 0 {
        return;
    }
    let last = out[r - 1];
    let (la, lb) = (sa[r - 1], sb[r - 1]);
    let mut idx = vec![0usize; r - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    loop {
        for j in 0..last {
            f(o + j, oa + j * la, ob + j * lb);
        }
        o += last;
        if o >= total {
            break;
        }
        let mut d = r - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Gather `out_shape` elements from `src` starting at `base` with per-axis `strides`.
fn gather<T: Scalar>(src: &[T], base: usize, out_shape: &[usize], strides: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(numel(out_shape));
    let zero = vec![0; out_shape.len()];
    for_each2(out_shape, strides, &zero, |_, oa, _| out.push(src[base + oa]));
    out
}

/// Adjoint of [`gather`]: scatter-add `g` into `dst`.
fn scatter_add<T: Scalar>(g: &[T], dst: &mut [T], base: usize, shape: &[usize], strides: &[usize]) {
    let zero = vec![0; shape.len()];
    for_each2(shape, strides, &zero, |o, oa, _| dst[base + oa] += g[o]);
}

fn reduce_to<T: Scalar>(g: &[T], out: &[usize], target: &[usize]) -> Vec<T> {
    if out == target {
        return g.to_vec();
    }
    let mut acc = vec![T::zero(); numel(target)];
    let st = aligned_strides(target, out);
    scatter_add(g, &mut acc, 0, out, &st);
    acc
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let a = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let one = T::one();
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t)
        + half * x * (one - t * t) * c * (one + T::from_f64_lossy(3.0) * a * x * x);
    (y, dy)
}

fn split_last2(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    (numel(&shape[..r - 2]), shape[r - 2], shape[r - 1])
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
            backward_done: false,
            param_vars: HashMap::new(),
        }
    }

    /// Graph that never records gradients (inference).
    pub fn inference() -> Self {
        let mut g = Self::new();
        g.grad_enabled = false;
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Toggle gradient recording for subsequently created nodes; returns the
    /// previous setting.
    pub fn set_grad_enabled(&mut self, on: bool) -> bool {
        std::mem::replace(&mut self.grad_enabled, on)
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn value(&self, v: Var) -> &NdArray<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call with respect to `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: NdArray<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: NdArray<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: NdArray<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(NdArray::scalar(v))
    }

    /// Leaf bound to a stored parameter. Gradients reach the store through
    /// [`ParamStore::accumulate_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (id, self.grad_enabled);
        if let Some(&v) = self.param_vars.get(&key) {
            return v;
        }
        let value = store.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            requires_grad: self.grad_enabled,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(key, v);
        v
    }

    /// Parameter ids and gradients reached by the last backward pass.
    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Param(id) => self.grads.get(i).and_then(|g| g.as_deref()).map(|g| (id, g)),
            _ => None,
        })
    }

    /// Copy of `v`'s value with no history.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    // -----------------------------------------------------------------------
    // elementwise

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<NdArray<T>> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        if sa == sb {
            let data = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
            return Ok(NdArray::new_unchecked(sa, data));
        }
        let out = broadcast_shape(&sa, &sb).ok_or_else(|| shape_err(name, &sa, &sb))?;
        let (ta, tb) = (aligned_strides(&sa, &out), aligned_strides(&sb, &out));
        let mut data = vec![T::zero(); numel(&out)];
        for_each2(&out, &ta, &tb, |o, ia, ib| data[o] = f(va[ia], vb[ib]));
        Ok(NdArray::new_unchecked(out, data))
    }

    /// Elementwise sum with NumPy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a), &[a])
    }

    /// Inverse hyperbolic tangent; inputs must lie in (−1, 1).
    pub fn atanh(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|x| x.abs() >= T::one()) {
            return Err(invalid("atanh", "input outside (-1, 1)"));
        }
        let v = self.value(a).map(|x| x.atanh());
        Ok(self.push(v, Op::Atanh(a), &[a]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| gelu_parts(x).0);
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < T::zero()) {
            return Err(invalid("sqrt", "negative input"));
        }
        let v = self.value(a).map(|x| x.sqrt());
        Ok(self.push(v, Op::Sqrt(a), &[a]))
    }

    /// `round(levels·x)/levels` forward (half away from zero), identity backward.
    pub fn ste_round(&mut self, a: Var, levels: u32) -> Var {
        let n = T::from_f64_lossy(levels as f64);
        let v = self.value(a).map(|x| (x * n).round() / n);
        self.push(v, Op::SteRound(a), &[a])
    }

    // -----------------------------------------------------------------------
    // linear algebra

    /// `a [..., m, k] · b`, where `b` is either `[k, n]` (shared) or
    /// `[..., k, n]` with the same leading dimensions as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (batch, m, k) = split_last2(&sa);
        let (_, kb, n) = split_last2(&sb);
        let shared = sb.len() == 2;
        if kb != k || (!shared && sb[..sb.len() - 2] != sa[..sa.len() - 2]) {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        if shared {
            kernels::gemm_nn(batch * m, k, n, va, vb, &mut out);
        } else {
            for i in 0..batch {
                kernels::gemm_nn(
                    m,
                    k,
                    n,
                    &va[i * m * k..],
                    &vb[i * k * n..],
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        Ok(self.push(NdArray::new_unchecked(shape, out), Op::MatMul(a, b), &[a, b]))
    }

    fn conv_geom(x: &[usize], w: &[usize], spec: ConvSpec, transposed: bool) -> Result<(ConvGeom, Vec<usize>)> {
        if x.len() != 4 || w.len() != 4 {
            return Err(shape_err(if transposed { "conv_transpose2d" } else { "conv2d" }, x, w));
        }
        let (kh, kw) = (w[2], w[3]);
        let ((sh, sw), (ph, pw)) = (spec.stride, spec.pad);
        if !transposed {
            if w[1] != x[1] {
                return Err(shape_err("conv2d", x, w));
            }
            let oh = ConvGeom::conv_out(x[2], kh, sh, ph).ok_or_else(|| shape_err("conv2d", x, w))?;
            let ow = ConvGeom::conv_out(x[3], kw, sw, pw).ok_or_else(|| shape_err("conv2d", x, w))?;
            let g = ConvGeom {
                c: x[1],
                h: x[2],
                w: x[3],
                kh,
                kw,
                sh,
                sw,
                ph,
                pw,
                oh,
                ow,
            };
            Ok((g, vec![x[0], w[0], oh, ow]))
        } else {
            if w[0] != x[1] {
                return Err(shape_err("conv_transpose2d", x, w));
            }
            let oh = ConvGeom::conv_t_out(x[2], kh, sh, ph).ok_or_else(|| shape_err("conv_transpose2d", x, w))?;
            let ow = ConvGeom::conv_t_out(x[3], kw, sw, pw).ok_or_else(|| shape_err("conv_transpose2d", x, w))?;
            let g = ConvGeom {
                c: w[1],
                h: oh,
                w: ow,
                kh,
                kw,
                sh,
                sw,
                ph,
                pw,
                oh: x[2],
                ow: x[3],
            };
            if ConvGeom::conv_out(oh, kh, sh, ph) != Some(x[2]) || ConvGeom::conv_out(ow, kw, sw, pw) != Some(x[3]) {
                return Err(invalid("conv_transpose2d", "stride/padding do not invert exactly"));
            }
            Ok((g, vec![x[0], w[1], oh, ow]))
        }
    }

    fn check_bias(&self, b: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(shape_err(op, self.shape(b), &[channels]));
            }
        }
        Ok(())
    }

    /// 2-D convolution: `x [B, Cin, H, W]`, `w [Cout, Cin, kh, kw]`, `b [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize), pad: (usize, usize)) -> Result<Var> {
        let spec = ConvSpec { stride, pad };
        let (geom, oshape) = Self::conv_geom(self.shape(x), self.shape(w), spec, false)?;
        let cout = oshape[1];
        self.check_bias(b, cout, "conv2d")?;
        let batch = oshape[0];
        let (kc, p) = (geom.col_rows(), geom.positions());
        let in_sz = geom.c * geom.h * geom.w;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); batch * cout * p];
        let mut cols = vec![T::zero(); kc * p];
        for i in 0..batch {
            kernels::im2col(&xv[i * in_sz..(i + 1) * in_sz], &geom, &mut cols);
            let ob = &mut out[i * cout * p..(i + 1) * cout * p];
            if let Some(b) = b {
                for (row, &bv) in ob.chunks_exact_mut(p).zip(self.value(b).data()) {
                    row.fill(bv);
                }
            }
            kernels::gemm_nn(cout, kc, p, wv, &cols, ob);
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(NdArray::new_unchecked(oshape, out), Op::Conv2d { x, w, b, spec }, &inputs))
    }

    /// Transposed convolution: `x [B, Cin, H, W]`, `w [Cin, Cout, kh, kw]`, `b [Cout]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let spec = ConvSpec { stride, pad };
        let (geom, oshape) = Self::conv_geom(self.shape(x), self.shape(w), spec, true)?;
        let (batch, cin, cout) = (oshape[0], self.shape(x)[1], oshape[1]);
        self.check_bias(b, cout, "conv_transpose2d")?;
        let (kc, p) = (geom.col_rows(), geom.positions());
        let osz = cout * geom.h * geom.w;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); batch * osz];
        let mut cols = vec![T::zero(); kc * p];
        for i in 0..batch {
            cols.fill(T::zero());
            kernels::gemm_tn(kc, cin, p, wv, &xv[i * cin * p..(i + 1) * cin * p], &mut cols);
            let ob = &mut out[i * osz..(i + 1) * osz];
            kernels::col2im(&cols, &geom, ob);
            if let Some(b) = b {
                for (plane, &bv) in ob.chunks_exact_mut(geom.h * geom.w).zip(self.value(b).data()) {
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(NdArray::new_unchecked(oshape, out), Op::ConvT2d { x, w, b, spec }, &inputs))
    }

    // -----------------------------------------------------------------------
    // normalisation and attention

    /// Softmax over the last axis. `-inf` entries receive exactly zero weight.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| invalid("softmax", "scalar input"))?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(d) {
            softmax_row(row);
        }
        Ok(self.push(NdArray::new_unchecked(shape, out), Op::Softmax(a), &[a]))
    }

    /// Normalise the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| invalid("layer_norm", "scalar input"))?;
        let dn = T::from_usize_lossy(d);
        let mut out = self.value(a).to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / d.max(1));
        for row in out.chunks_exact_mut(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        Ok(self.push(NdArray::new_unchecked(shape, out), Op::LayerNorm { x: a, inv_std }, &[a]))
    }

    /// `softmax(q·kᵀ/√d + mask)·v` for `q [..., Nq, d]`, `k [..., Nk, d]`,
    /// `v [..., Nk, dv]` and an optional additive `mask [Nq, Nk]` of `0`/`-inf`.
    /// Blocked keys are skipped, so they cannot influence the result at all.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&NdArray<T>>) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if sq.len() < 2 || sk.len() != sq.len() || sv.len() != sq.len() {
            return Err(shape_err("attention", &sq, &sk));
        }
        let (batch, nq, d) = split_last2(&sq);
        let (bk, nk, dk) = split_last2(&sk);
        let (bv, nv, dv) = split_last2(&sv);
        if bk != batch || bv != batch || dk != d || nv != nk || sq[..sq.len() - 2] != sk[..sk.len() - 2] {
            return Err(shape_err("attention", &sq, &sk));
        }
        if let Some(m) = mask {
            if m.shape() != [nq, nk] {
                return Err(shape_err("attention mask", m.shape(), &[nq, nk]));
            }
        }
        let scale = T::one() / T::from_usize_lossy(d).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); batch * nq * nk];
        let mut out = vec![T::zero(); batch * nq * dv];
        for b in 0..batch {
            for i in 0..nq {
                let qi = &qv[(b * nq + i) * d..(b * nq + i + 1) * d];
                let prow = &mut probs[(b * nq + i) * nk..(b * nq + i + 1) * nk];
                for (j, p) in prow.iter_mut().enumerate() {
                    let m = mask.map_or(T::zero(), |m| m.data()[i * nk + j]);
                    *p = if m == T::neg_infinity() {
                        T::neg_infinity()
                    } else {
                        kernels::dot(qi, &kv[(b * nk + j) * d..(b * nk + j + 1) * d]) * scale + m
                    };
                }
                softmax_row(prow);
                let orow = &mut out[(b * nq + i) * dv..(b * nq + i + 1) * dv];
                for (j, &p) in prow.iter().enumerate() {
                    if p == T::zero() {
                        continue;
                    }
                    let vj = &vv[(b * nk + j) * dv..(b * nk + j + 1) * dv];
                    for (o, &x) in orow.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
        let mut shape = sq[..sq.len() - 1].to_vec();
        shape.push(dv);
        Ok(self.push(
            NdArray::new_unchecked(shape, out),
            Op::Attention { q, k, v, probs, scale },
            &[q, k, v],
        ))
    }

    // -----------------------------------------------------------------------
    // shape manipulation

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return Err(shape_err("permute", &shape, axes));
        }
        let st = strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&ax| st[ax]).collect();
        let data = gather(self.value(a).data(), 0, &out_shape, &src_strides);
        Ok(self.push(NdArray::new_unchecked(out_shape, data), Op::Permute(a, axes.to_vec()), &[a]))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(invalid("transpose_last", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(NdArray::new_unchecked(shape, out), Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid("slice", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let st = strides(&shape);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let data = gather(self.value(a).data(), start * st[axis], &out_shape, &st);
        Ok(self.push(NdArray::new_unchecked(out_shape, data), Op::Slice { x: a, axis, start }, &[a]))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if broadcast_shape(&s, shape).as_deref() != Some(shape) {
            return Err(shape_err("broadcast_to", &s, shape));
        }
        let data = gather(self.value(a).data(), 0, shape, &aligned_strides(&s, shape));
        Ok(self.push(NdArray::new_unchecked(shape.to_vec(), data), Op::BroadcastTo(a), &[a]))
    }

    // -----------------------------------------------------------------------
    // reductions

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(NdArray::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize_lossy(v.numel().max(1));
        self.push(NdArray::scalar(s), Op::Mean(a), &[a])
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(invalid("sum_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]));
        let x = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        Ok(self.push(NdArray::new_unchecked(oshape, out), Op::SumAxis(a, axis), &[a]))
    }

    // -----------------------------------------------------------------------
    // reverse sweep

    /// Populate gradients of the scalar `loss` with respect to every node that
    /// requires them. May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State("backward already ran on this graph; rebuild the forward pass".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::State(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let is_source = matches!(self.nodes[i].op, Op::Leaf | Op::Param(_));
            let Some(g) = (if is_source { None } else { self.grads[i].take() }) else {
                continue;
            };
            self.backward_node(i, &g)?;
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn val(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn backward_node(&mut self, i: usize, g: &[T]) -> Result<()> {
        let out_shape = self.nodes[i].value.shape().to_vec();
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf | Op::Param(_) => {}
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let ga = reduce_to(g, &out_shape, self.shape(a));
                let mut gb = reduce_to(g, &out_shape, self.shape(b));
                if matches!(op, Op::Sub(..)) {
                    gb.iter_mut().for_each(|x| *x = -*x);
                }
                self.acc(a, ga);
                self.acc(b, gb);
            }
            &Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let (va, vb) = (self.val(a), self.val(b));
                let (ga, gb) = if sa == sb {
                    (
                        g.iter().zip(vb).map(|(&g, &y)| g * y).collect(),
                        g.iter().zip(va).map(|(&g, &x)| g * x).collect(),
                    )
                } else {
                    let (ta, tb) = (aligned_strides(&sa, &out_shape), aligned_strides(&sb, &out_shape));
                    let mut ga = vec![T::zero(); numel(&sa)];
                    let mut gb = vec![T::zero(); numel(&sb)];
                    for_each2(&out_shape, &ta, &tb, |o, ia, ib| {
                        ga[ia] += g[o] * vb[ib];
                        gb[ib] += g[o] * va[ia];
                    });
                    (ga, gb)
                };
                self.acc(a, ga);
                self.acc(b, gb);
            }
            &Op::Scale(a, c) => self.acc(a, g.iter().map(|&x| x * c).collect()),
            &Op::AddScalar(a) | &Op::Reshape(a) => self.acc(a, g.to_vec()),
            &Op::SteRound(a) => self.acc(a, g.to_vec()),
            &Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                let ga = g.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)).collect();
                self.acc(a, ga);
            }
            &Op::Atanh(a) => {
                let x = self.val(a);
                let ga = g.iter().zip(x).map(|(&g, &x)| g / (T::one() - x * x)).collect();
                self.acc(a, ga);
            }
            &Op::Gelu(a) => {
                let x = self.val(a);
                let ga = g.iter().zip(x).map(|(&g, &x)| g * gelu_parts(x).1).collect();
                self.acc(a, ga);
            }
            &Op::Sqrt(a) => {
                let y = self.nodes[i].value.data();
                let half = T::from_f64_lossy(0.5);
                let ga = g.iter().zip(y).map(|(&g, &y)| g * half / y).collect();
                self.acc(a, ga);
            }
            &Op::MatMul(a, b) => self.backward_matmul(a, b, g),
            &Op::Conv2d { x, w, b, spec } => self.backward_conv(x, w, b, spec, g, false)?,
            &Op::ConvT2d { x, w, b, spec } => self.backward_conv(x, w, b, spec, g, true)?,
            &Op::Softmax(a) => {
                let y = self.nodes[i].value.data();
                let d = *out_shape.last().unwrap();
                let mut ga = vec![T::zero(); g.len()];
                for ((gr, yr), dr) in g.chunks_exact(d).zip(y.chunks_exact(d)).zip(ga.chunks_exact_mut(d)) {
                    let s: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - s);
                    }
                }
                self.acc(a, ga);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = self.nodes[i].value.data();
                let d = *out_shape.last().unwrap();
                let dn = T::from_usize_lossy(d);
                let mut gx = vec![T::zero(); g.len()];
                for (r, &inv) in inv_std.iter().enumerate() {
                    let (gr, yr) = (&g[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
                    let mg = gr.iter().copied().sum::<T>() / dn;
                    let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                    for j in 0..d {
                        gx[r * d + j] = inv * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                self.acc(*x, gx);
            }
            Op::Attention { q, k, v, probs, scale } => self.backward_attention(*q, *k, *v, probs, *scale, g),
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                let st = strides(&out_shape);
                let in_shape = self.shape(*a).to_vec();
                let src: Vec<usize> = inv.iter().map(|&ax| st[ax]).collect();
                self.acc(*a, gather(g, 0, &in_shape, &src));
            }
            Op::Concat(parts, axis) => {
                let outer = numel(&out_shape[..*axis]);
                let inner = numel(&out_shape[axis + 1..]);
                let total = out_shape[*axis] * inner;
                let mut off = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis] * inner;
                    let mut gp = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        gp.extend_from_slice(&g[o * total + off..o * total + off + len]);
                    }
                    off += len;
                    self.acc(p, gp);
                }
            }
            &Op::Slice { x, axis, start } => {
                let in_shape = self.shape(x).to_vec();
                let st = strides(&in_shape);
                let mut gx = vec![T::zero(); numel(&in_shape)];
                scatter_add(g, &mut gx, start * st[axis], &out_shape, &st);
                self.acc(x, gx);
            }
            &Op::BroadcastTo(a) => {
                let target = self.shape(a).to_vec();
                self.acc(a, reduce_to(g, &out_shape, &target));
            }
            &Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                self.acc(a, vec![g[0]; n]);
            }
            &Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                self.acc(a, vec![g[0] / T::from_usize_lossy(n.max(1)); n]);
            }
            &Op::SumAxis(a, axis) => {
                let in_shape = self.shape(a).to_vec();
                let (outer, n, inner) = (numel(&in_shape[..axis]), in_shape[axis], numel(&in_shape[axis + 1..]));
                let mut ga = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        ga.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                self.acc(a, ga);
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }

    fn backward_matmul(&mut self, a: Var, b: Var, g: &[T]) {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k) = split_last2(&sa);
        let n = sb[sb.len() - 1];
        let shared = sb.len() == 2;
        let (va, vb) = (self.val(a), self.val(b));
        let need_a = self.nodes[a.0].requires_grad;
        let need_b = self.nodes[b.0].requires_grad;
        let mut ga = if need_a { vec![T::zero(); va.len()] } else { Vec::new() };
        let mut gb = if need_b { vec![T::zero(); vb.len()] } else { Vec::new() };
        if shared {
            if need_a {
                kernels::gemm_nt(batch * m, n, k, g, vb, &mut ga);
            }
            if need_b {
                kernels::gemm_tn(k, batch * m, n, va, g, &mut gb);
            }
        } else {
            for i in 0..batch {
                let gi = &g[i * m * n..(i + 1) * m * n];
                if need_a {
                    kernels::gemm_nt(m, n, k, gi, &vb[i * k * n..], &mut ga[i * m * k..(i + 1) * m * k]);
                }
                if need_b {
                    kernels::gemm_tn(k, m, n, &va[i * m * k..], gi, &mut gb[i * k * n..(i + 1) * k * n]);
                }
            }
        }
        if need_a {
            self.acc(a, ga);
        }
        if need_b {
            self.acc(b, gb);
        }
    }

    fn backward_conv(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec, g: &[T], transposed: bool) -> Result<()> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (geom, oshape) = Self::conv_geom(&sx, &sw, spec, transposed)?;
        let batch = sx[0];
        let (kc, p) = (geom.col_rows(), geom.positions());
        let (xv, wv) = (self.val(x), self.val(w));
        let need_x = self.nodes[x.0].requires_grad;
        let need_w = self.nodes[w.0].requires_grad;
        let mut gx = if need_x { vec![T::zero(); xv.len()] } else { Vec::new() };
        let mut gw = if need_w { vec![T::zero(); wv.len()] } else { Vec::new() };
        let mut cols = vec![T::zero(); kc * p];
        let out_sz = numel(&oshape[1..]);
        if !transposed {
            let cout = oshape[1];
            let in_sz = geom.c * geom.h * geom.w;
            for i in 0..batch {
                let gi = &g[i * out_sz..(i + 1) * out_sz];
                if need_w {
                    kernels::im2col(&xv[i * in_sz..(i + 1) * in_sz], &geom, &mut cols);
                    kernels::gemm_nt(cout, p, kc, gi, &cols, &mut gw);
                }
                if need_x {
                    cols.fill(T::zero());
                    kernels::gemm_tn(kc, cout, p, wv, gi, &mut cols);
                    kernels::col2im(&cols, &geom, &mut gx[i * in_sz..(i + 1) * in_sz]);
                }
            }
        } else {
            let cin = sx[1];
            for i in 0..batch {
                kernels::im2col(&g[i * out_sz..(i + 1) * out_sz], &geom, &mut cols);
                let xi = &xv[i * cin * p..(i + 1) * cin * p];
                if need_x {
                    kernels::gemm_nn(cin, kc, p, wv, &cols, &mut gx[i * cin * p..(i + 1) * cin * p]);
                }
                if need_w {
                    kernels::gemm_nt(cin, p, kc, xi, &cols, &mut gw);
                }
            }
        }
        let gb = b.filter(|b| self.nodes[b.0].requires_grad).map(|b| {
            let cout = oshape[1];
            let plane = oshape[2] * oshape[3];
            let mut gb = vec![T::zero(); cout];
            for i in 0..batch {
                for (c, acc) in gb.iter_mut().enumerate() {
                    let off = (i * cout + c) * plane;
                    *acc += g[off..off + plane].iter().copied().sum::<T>();
                }
            }
            (b, gb)
        });
        if need_x {
            self.acc(x, gx);
        }
        if need_w {
            self.acc(w, gw);
        }
        if let Some((b, gb)) = gb {
            self.acc(b, gb);
        }
        Ok(())
    }

    fn backward_attention(&mut self, q: Var, k: Var, v: Var, probs: &[T], scale: T, g: &[T]) {
        let sq = self.shape(q).to_vec();
        let (batch, nq, d) = split_last2(&sq);
        let nk = self.shape(k)[sq.len() - 2];
        let dv = *self.shape(v).last().unwrap();
        let (qv, kv, vv) = (self.val(q), self.val(k), self.val(v));
        let mut gq = vec![T::zero(); qv.len()];
        let mut gk = vec![T::zero(); kv.len()];
        let mut gv = vec![T::zero(); vv.len()];
        let mut ds = vec![T::zero(); nk];
        for b in 0..batch {
            for i in 0..nq {
                let prow = &probs[(b * nq + i) * nk..(b * nq + i + 1) * nk];
                let gi = &g[(b * nq + i) * dv..(b * nq + i + 1) * dv];
                let mut s = T::zero();
                for j in 0..nk {
                    let p = prow[j];
                    if p == T::zero() {
                        ds[j] = T::zero();
                        continue;
                    }
                    let vj = &vv[(b * nk + j) * dv..(b * nk + j + 1) * dv];
                    let dp = kernels::dot(gi, vj);
                    ds[j] = dp;
                    s += p * dp;
                    for (o, &x) in gv[(b * nk + j) * dv..(b * nk + j + 1) * dv].iter_mut().zip(gi) {
                        *o += p * x;
                    }
                }
                let qi = &qv[(b * nq + i) * d..(b * nq + i + 1) * d];
                for j in 0..nk {
                    let p = prow[j];
                    if p == T::zero() {
                        continue;
                    }
                    let dsj = p * (ds[j] - s) * scale;
                    let kj = &kv[(b * nk + j) * d..(b * nk + j + 1) * d];
                    for (o, &x) in gq[(b * nq + i) * d..(b * nq + i + 1) * d].iter_mut().zip(kj) {
                        *o += dsj * x;
                    }
                    for (o, &x) in gk[(b * nk + j) * d..(b * nk + j + 1) * d].iter_mut().zip(qi) {
                        *o += dsj * x;
                    }
                }
            }
        }
        self.acc(q, gq);
        self.acc(k, gk);
        self.acc(v, gv);
    }
}

fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.fill(T::zero());
        return;
    }
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = if *v == T::neg_infinity() { T::zero() } else { (*v - max).exp() };
        s += *v;
    }
    row.iter_mut().for_each(|v| *v = *v / s);
}
