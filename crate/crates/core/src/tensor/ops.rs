use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gemm, numel, Float, Tensor};
use crate::error::{Error, Result};

pub(crate) enum Op<T: Float> {
    MatMul {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Add {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Mul {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Softmax {
        x: Tensor<T>,
        axis: usize,
    },
    LayerNorm {
        x: Tensor<T>,
        gamma: Tensor<T>,
        beta: Tensor<T>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Tensor<T>,
        ids: Vec<usize>,
    },
    Relu {
        x: Tensor<T>,
    },
    Gelu {
        x: Tensor<T>,
    },
    Transpose {
        x: Tensor<T>,
        perm: Vec<usize>,
    },
    Reshape {
        x: Tensor<T>,
    },
    Concat {
        xs: Vec<Tensor<T>>,
        axis: usize,
    },
    MaskFill {
        x: Tensor<T>,
        mask: Arc<Vec<bool>>,
    },
    Scale {
        x: Tensor<T>,
        c: T,
    },
    Mean {
        x: Tensor<T>,
    },
    Sum {
        x: Tensor<T>,
    },
    CrossEntropy {
        logits: Tensor<T>,
        targets: Vec<usize>,
        counted: Vec<bool>,
        denom: T,
        probs: Vec<T>,
    },
    Dropout {
        x: Tensor<T>,
        keep: Vec<T>,
    },
}

type Grads<'a, T> = Vec<(&'a Tensor<T>, Vec<T>)>;

impl<T: Float> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Embedding { table, .. } => vec![table],
            Op::Concat { xs, .. } => xs.iter().collect(),
            Op::CrossEntropy { logits, .. } => vec![logits],
            Op::Softmax { x, .. }
            | Op::Relu { x }
            | Op::Gelu { x }
            | Op::Transpose { x, .. }
            | Op::Reshape { x }
            | Op::MaskFill { x, .. }
            | Op::Scale { x, .. }
            | Op::Mean { x }
            | Op::Sum { x }
            | Op::Dropout { x, .. } => vec![x],
        }
    }

    /// Vector-Jacobian products for every gradient-requiring input.
    pub(crate) fn backward<'a>(&'a self, out: &Tensor<T>, g: &[T]) -> Result<Grads<'a, T>> {
        let mut res: Grads<'a, T> = Vec::new();
        match self {
            Op::MatMul { a, b } => {
                let (ash, bsh) = (a.shape(), b.shape());
                let k = ash[ash.len() - 1];
                if bsh.len() == 2 {
                    let n = bsh[1];
                    let rows = a.numel() / k;
                    if a.requires_grad() {
                        let mut da = vec![T::zero(); a.numel()];
                        gemm(rows, n, k, g, false, b.data(), true, T::zero(), &mut da);
                        res.push((a, da));
                    }
                    if b.requires_grad() {
                        let mut db = vec![T::zero(); b.numel()];
                        gemm(k, rows, n, a.data(), true, g, false, T::zero(), &mut db);
                        res.push((b, db));
                    }
                } else {
                    let m = ash[ash.len() - 2];
                    let n = bsh[bsh.len() - 1];
                    let batch = a.numel() / (m * k);
                    if a.requires_grad() {
                        let mut da = vec![T::zero(); a.numel()];
                        for i in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..],
                                false,
                                &b.data()[i * k * n..],
                                true,
                                T::zero(),
                                &mut da[i * m * k..],
                            );
                        }
                        res.push((a, da));
                    }
                    if b.requires_grad() {
                        let mut db = vec![T::zero(); b.numel()];
                        for i in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &a.data()[i * m * k..],
                                true,
                                &g[i * m * n..],
                                false,
                                T::zero(),
                                &mut db[i * k * n..],
                            );
                        }
                        res.push((b, db));
                    }
                }
            }
            Op::Add { a, b } => {
                if a.requires_grad() {
                    res.push((a, g.to_vec()));
                }
                if b.requires_grad() {
                    res.push((b, reduce_to_suffix(g, b.numel())));
                }
            }
            Op::Mul { a, b } => {
                let bn = b.numel();
                if a.requires_grad() {
                    let bd = b.data();
                    let da = g.iter().enumerate().map(|(i, &gi)| gi * bd[i % bn]).collect();
                    res.push((a, da));
                }
                if b.requires_grad() {
                    let mut db = vec![T::zero(); bn];
                    for (i, (&gi, &ai)) in g.iter().zip(a.data()).enumerate() {
                        db[i % bn] = db[i % bn] + gi * ai;
                    }
                    res.push((b, db));
                }
            }
            Op::Softmax { x, axis } => {
                let y = out.data();
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let mut dot = T::zero();
                        for j in 0..n {
                            let idx = base + j * inner;
                            dot = dot + g[idx] * y[idx];
                        }
                        for j in 0..n {
                            let idx = base + j * inner;
                            dx[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                }
                res.push((x, dx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = gamma.numel();
                let rows = x.numel() / d;
                let gm = gamma.data();
                let dn = T::lit(d as f64);
                if x.requires_grad() {
                    let mut dx = vec![T::zero(); x.numel()];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gm[j];
                            mean_d = mean_d + dxh;
                            mean_dx = mean_dx + dxh * xh[j];
                        }
                        mean_d = mean_d / dn;
                        mean_dx = mean_dx / dn;
                        for j in 0..d {
                            let dxh = gr[j] * gm[j];
                            dx[r * d + j] = rstd[r] * (dxh - mean_d - xh[j] * mean_dx);
                        }
                    }
                    res.push((x, dx));
                }
                if gamma.requires_grad() {
                    let mut dg = vec![T::zero(); d];
                    for (i, (&gi, &xh)) in g.iter().zip(xhat.iter()).enumerate() {
                        dg[i % d] = dg[i % d] + gi * xh;
                    }
                    res.push((gamma, dg));
                }
                if beta.requires_grad() {
                    res.push((beta, reduce_to_suffix(g, d)));
                }
            }
            Op::Embedding { table, ids } => {
                let d = table.shape()[1];
                let mut dt = vec![T::zero(); table.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    let src = &g[r * d..(r + 1) * d];
                    for (dst, &v) in dt[id * d..(id + 1) * d].iter_mut().zip(src) {
                        *dst = *dst + v;
                    }
                }
                res.push((table, dt));
            }
            Op::Relu { x } => {
                let dx = g
                    .iter()
                    .zip(x.data())
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                res.push((x, dx));
            }
            Op::Gelu { x } => {
                let dx = g
                    .iter()
                    .zip(x.data())
                    .map(|(&gi, &xi)| gi * gelu_grad(xi))
                    .collect();
                res.push((x, dx));
            }
            Op::Transpose { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                res.push((x, permute(g, out.shape(), &inv)));
            }
            Op::Reshape { x } => res.push((x, g.to_vec())),
            Op::Concat { xs, axis } => {
                let outer = numel(&out.shape()[..*axis]);
                let inner = numel(&out.shape()[*axis + 1..]);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for x in xs {
                    let chunk = x.shape()[*axis] * inner;
                    if x.requires_grad() {
                        let mut dx = Vec::with_capacity(x.numel());
                        for o in 0..outer {
                            let start = o * total + offset;
                            dx.extend_from_slice(&g[start..start + chunk]);
                        }
                        res.push((x, dx));
                    }
                    offset += chunk;
                }
            }
            Op::MaskFill { x, mask } => {
                let dx = g
                    .iter()
                    .zip(mask.iter())
                    .map(|(&gi, &m)| if m { T::zero() } else { gi })
                    .collect();
                res.push((x, dx));
            }
            Op::Scale { x, c } => res.push((x, g.iter().map(|&gi| gi * *c).collect())),
            Op::Mean { x } => {
                let v = g[0] / T::lit(x.numel() as f64);
                res.push((x, vec![v; x.numel()]));
            }
            Op::Sum { x } => res.push((x, vec![g[0]; x.numel()])),
            Op::CrossEntropy {
                logits,
                targets,
                counted,
                denom,
                probs,
            } => {
                let v = logits.shape()[logits.ndim() - 1];
                let scale = g[0] / *denom;
                let mut dl = vec![T::zero(); logits.numel()];
                for (r, (&t, &c)) in targets.iter().zip(counted).enumerate() {
                    if !c {
                        continue;
                    }
                    let row = &mut dl[r * v..(r + 1) * v];
                    for (dst, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                        *dst = p * scale;
                    }
                    row[t] = row[t] - scale;
                }
                res.push((logits, dl));
            }
            Op::Dropout { x, keep } => {
                res.push((x, g.iter().zip(keep).map(|(&gi, &k)| gi * k).collect()));
            }
        }
        Ok(res)
    }
}

fn is_suffix(big: &[usize], small: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn reduce_to_suffix<T: Float>(g: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for chunk in g.chunks(n) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o = *o + v;
        }
    }
    out
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Materializes `data` (of `shape`) with axes reordered so that output axis `i` is input axis `perm[i]`.
fn permute<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let nd = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let run = if perm[nd - 1] == nd - 1 { shape[nd - 1] } else { 1 };
    let outer_dims = if run > 1 { nd - 1 } else { nd };
    let mut idx = vec![0usize; outer_dims];
    loop {
        let off: usize = (0..outer_dims).map(|i| idx[i] * in_strides[perm[i]]).sum();
        if run > 1 {
            out.extend_from_slice(&data[off..off + run]);
        } else {
            out.push(data[off]);
        }
        let mut d = outer_dims;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Float>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Float>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

/// Numerically stable softmax of each row of `row_len` entries, in place.
pub(crate) fn softmax_rows<T: Float>(data: &mut [T], row_len: usize) {
    for row in data.chunks_mut(row_len) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Log-softmax of one row.
pub(crate) fn log_softmax<T: Float>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

impl<T: Float> Tensor<T> {
    /// `[..., m, k] × [k, n]` (weight shared over leading axes) or `[..., m, k] × [..., k, n]` (batched).
    pub fn matmul(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (ash, bsh) = (self.shape(), b.shape());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(Error::shape("matmul", ash, bsh));
        }
        let k = ash[ash.len() - 1];
        if bsh.len() == 2 {
            if bsh[0] != k {
                return Err(Error::shape("matmul", ash, bsh));
            }
            let n = bsh[1];
            let rows = self.numel() / k;
            let mut out = vec![T::zero(); rows * n];
            gemm(rows, k, n, self.data(), false, b.data(), false, T::zero(), &mut out);
            let mut shape = ash[..ash.len() - 1].to_vec();
            shape.push(n);
            return Ok(Tensor::from_op(out, shape, Op::MatMul { a: self.clone(), b: b.clone() }));
        }
        if bsh.len() != ash.len() || bsh[..bsh.len() - 2] != ash[..ash.len() - 2] || bsh[bsh.len() - 2] != k {
            return Err(Error::shape("matmul", ash, bsh));
        }
        let m = ash[ash.len() - 2];
        let n = bsh[bsh.len() - 1];
        let batch = self.numel() / (m * k);
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &self.data()[i * m * k..],
                false,
                &b.data()[i * k * n..],
                false,
                T::zero(),
                &mut out[i * m * n..],
            );
        }
        let mut shape = ash[..ash.len() - 1].to_vec();
        shape.push(n);
        Ok(Tensor::from_op(out, shape, Op::MatMul { a: self.clone(), b: b.clone() }))
    }

    /// Element-wise sum; `b` may also match a trailing suffix of `self`'s shape (bias add).
    pub fn add(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        if !is_suffix(self.shape(), b.shape()) {
            return Err(Error::shape("add", self.shape(), b.shape()));
        }
        let bd = b.data();
        let bn = bd.len();
        let out = self.data().iter().enumerate().map(|(i, &a)| a + bd[i % bn]).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Add { a: self.clone(), b: b.clone() }))
    }

    /// Element-wise product with the same suffix-broadcast rule as [`add`](Self::add).
    pub fn mul(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        if !is_suffix(self.shape(), b.shape()) {
            return Err(Error::shape("mul", self.shape(), b.shape()));
        }
        let bd = b.data();
        let bn = bd.len();
        let out = self.data().iter().enumerate().map(|(i, &a)| a * bd[i % bn]).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Mul { a: self.clone(), b: b.clone() }))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::invalid(format!(
                "softmax: axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = x.to_vec();
        if inner == 1 {
            softmax_rows(&mut out, n);
        } else {
            let mut lane = vec![T::zero(); n];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    for (j, l) in lane.iter_mut().enumerate() {
                        *l = x[base + j * inner];
                    }
                    softmax_rows(&mut lane, n);
                    for (j, &l) in lane.iter().enumerate() {
                        out[base + j * inner] = l;
                    }
                }
            }
        }
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Softmax { x: self.clone(), axis }))
    }

    /// Normalizes over the last axis, then applies the affine `gamma`/`beta` of that size.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let d = self.shape()[self.ndim() - 1];
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layernorm", self.shape(), gamma.shape()));
        }
        let rows = self.numel() / d;
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let dn = T::lit(d as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + T::lit(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gm[j] + bt[j];
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::LayerNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                xhat,
                rstd,
            },
        ))
    }

    /// Gathers rows of a `[vocab, d]` table; output shape is `ids_shape + [d]`.
    pub fn embedding(&self, ids: &[usize], ids_shape: &[usize]) -> Result<Tensor<T>> {
        if self.ndim() != 2 {
            return Err(Error::shape("embedding_lookup", self.shape(), ids_shape));
        }
        if numel(ids_shape) != ids.len() {
            return Err(Error::shape("embedding_lookup", &[ids.len()], ids_shape));
        }
        let (v, d) = (self.shape()[0], self.shape()[1]);
        let table = self.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::invalid(format!(
                    "embedding_lookup: id {id} out of range for table of {v} rows"
                )));
            }
            out.extend_from_slice(&table[id * d..(id + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Embedding {
                table: self.clone(),
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        let out = self.data().iter().map(|&v| v.max(T::zero())).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Relu { x: self.clone() }))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Result<Tensor<T>> {
        let out = self.data().iter().map(|&v| gelu(v)).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Gelu { x: self.clone() }))
    }

    /// General axis permutation; output axis `i` is input axis `perm[i]`.
    pub fn transpose(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("transpose", self.shape(), perm));
        }
        let out = permute(self.data(), self.shape(), perm);
        let shape = perm.iter().map(|&p| self.shape()[p]).collect();
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Transpose {
                x: self.clone(),
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        if !self.requires_grad() {
            return Tensor::shared(self.data_arc(), shape, false);
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape { x: self.clone() }))
    }

    pub fn concat(xs: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat: no inputs"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(Error::invalid(format!("concat: axis {axis} out of range")));
        }
        for x in xs {
            let ok = x.ndim() == nd
                && (0..nd).all(|i| i == axis || x.shape()[i] == first.shape()[i]);
            if !ok {
                return Err(Error::shape("concat", first.shape(), x.shape()));
            }
        }
        let outer = numel(&first.shape()[..axis]);
        let inner = numel(&first.shape()[axis + 1..]);
        let mut shape = first.shape().to_vec();
        shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for x in xs {
                let chunk = x.shape()[axis] * inner;
                out.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor::from_op(out, shape, Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// Replaces entries where `mask` is true with `value`.
    pub fn mask_fill(&self, mask: Arc<Vec<bool>>, value: f64) -> Result<Tensor<T>> {
        if mask.len() != self.numel() {
            return Err(Error::shape("mask_fill", self.shape(), &[mask.len()]));
        }
        let fill = T::lit(value);
        let out = self
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::MaskFill { x: self.clone(), mask }))
    }

    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        let out = self.data().iter().map(|&v| v * c).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Scale { x: self.clone(), c }))
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&self) -> Result<Tensor<T>> {
        let m = self.data().iter().copied().sum::<T>() / T::lit(self.numel() as f64);
        Ok(Tensor::from_op(vec![m], vec![1], Op::Mean { x: self.clone() }))
    }

    pub fn sum(&self) -> Result<Tensor<T>> {
        let s = self.data().iter().copied().sum::<T>();
        Ok(Tensor::from_op(vec![s], vec![1], Op::Sum { x: self.clone() }))
    }

    /// Token cross-entropy of `[..., vocab]` logits against one target per row.
    ///
    /// Rows whose target equals `ignore` contribute nothing. The summed loss is
    /// divided by `denom` when given, else by the number of counted rows.
    pub fn cross_entropy(&self, targets: &[usize], ignore: Option<usize>, denom: Option<f64>) -> Result<Tensor<T>> {
        let v = self.shape()[self.ndim() - 1];
        let rows = self.numel() / v;
        if targets.len() != rows {
            return Err(Error::shape("cross_entropy", self.shape(), &[targets.len()]));
        }
        let counted: Vec<bool> = targets.iter().map(|&t| Some(t) != ignore).collect();
        let n_counted = counted.iter().filter(|&&c| c).count();
        let denom = match denom {
            Some(d) if d > 0.0 => T::lit(d),
            Some(d) => return Err(Error::invalid(format!("cross_entropy: denominator {d} must be positive"))),
            None if n_counted == 0 => {
                return Err(Error::invalid("cross_entropy: no target tokens to score"))
            }
            None => T::lit(n_counted as f64),
        };
        let mut probs = self.to_vec();
        let mut total = T::zero();
        for (r, (&t, &c)) in targets.iter().zip(&counted).enumerate() {
            let row = &mut probs[r * v..(r + 1) * v];
            if c && t >= v {
                return Err(Error::invalid(format!("cross_entropy: target {t} out of range for {v} classes")));
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for p in row.iter_mut() {
                *p = (*p - max).exp();
                sum = sum + *p;
            }
            if c {
                let zt = self.data()[r * v + t];
                total = total + (sum.ln() + max - zt);
            }
            for p in row.iter_mut() {
                *p = *p / sum;
            }
        }
        Ok(Tensor::from_op(
            vec![total / denom],
            vec![1],
            Op::CrossEntropy {
                logits: self.clone(),
                targets: targets.to_vec(),
                counted,
                denom,
                probs,
            },
        ))
    }

    /// Inverted dropout; identity when `train` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, train: bool, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout: rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let s = T::lit(1.0 / (1.0 - p));
        let keep: Vec<T> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { s })
            .collect();
        let out = self.data().iter().zip(&keep).map(|(&v, &k)| v * k).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Dropout { x: self.clone(), keep }))
    }
}

/// A primitive together with its non-tensor arguments, for [`apply_primitive`].
#[derive(Debug, Clone)]
pub enum Primitive {
    MatMul,
    Add,
    Mul,
    Softmax { axis: usize },
    LayerNorm { eps: f64 },
    EmbeddingLookup { ids: Vec<usize>, ids_shape: Vec<usize> },
    Relu,
    Gelu,
    Transpose { perm: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Concat { axis: usize },
    MaskFill { mask: Arc<Vec<bool>>, value: f64 },
    Scale { c: f64 },
    Mean,
    Sum,
    CrossEntropy { targets: Vec<usize>, ignore: Option<usize> },
    Dropout { p: f64, train: bool, seed: u64 },
}

/// Applies `kind` to `inputs`, checking arity.
pub fn apply_primitive<T: Float>(kind: &Primitive, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let arity = match kind {
        Primitive::MatMul | Primitive::Add | Primitive::Mul => 2,
        Primitive::LayerNorm { .. } => 3,
        Primitive::Concat { .. } => inputs.len().max(1),
        _ => 1,
    };
    if inputs.len() != arity {
        return Err(Error::invalid(format!(
            "{kind:?}: expected {arity} inputs, got {}",
            inputs.len()
        )));
    }
    let x = inputs[0];
    match kind {
        Primitive::MatMul => x.matmul(inputs[1]),
        Primitive::Add => x.add(inputs[1]),
        Primitive::Mul => x.mul(inputs[1]),
        Primitive::Softmax { axis } => x.softmax(*axis),
        Primitive::LayerNorm { eps } => x.layer_norm(inputs[1], inputs[2], *eps),
        Primitive::EmbeddingLookup { ids, ids_shape } => x.embedding(ids, ids_shape),
        Primitive::Relu => x.relu(),
        Primitive::Gelu => x.gelu(),
        Primitive::Transpose { perm } => x.transpose(perm),
        Primitive::Reshape { shape } => x.reshape(shape),
        Primitive::Concat { axis } => {
            let xs: Vec<Tensor<T>> = inputs.iter().map(|t| (*t).clone()).collect();
            Tensor::concat(&xs, *axis)
        }
        Primitive::MaskFill { mask, value } => x.mask_fill(Arc::clone(mask), *value),
        Primitive::Scale { c } => x.scale(T::lit(*c)),
        Primitive::Mean => x.mean(),
        Primitive::Sum => x.sum(),
        Primitive::CrossEntropy { targets, ignore } => x.cross_entropy(targets, *ignore, None),
        Primitive::Dropout { p, train, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            x.dropout(*p, *train, &mut rng)
        }
    }
}
