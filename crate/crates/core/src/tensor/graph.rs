use super::kernels;
use super::{check_matmul, sigmoid, silu, softplus, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Vec<T>),
    Mask(Var, Vec<bool>),
    Silu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SoftmaxRows(Var),
    GatherRows(Var, Vec<Option<usize>>),
    GatherScalars(Var, Vec<Option<usize>>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Rope {
        x: Var,
        cos: Vec<T>,
        sin: Vec<T>,
    },
    SumAll(Var),
    SumCols(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<T>,
    },
}

/// Gradient buffer of `v`, created on first use, or None when `v` does not
/// need a gradient.
fn slot<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
) -> Option<&'a mut [T]> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    let entry = grads[v.0].get_or_insert_with(|| Tensor::zeros(n.value.shape()));
    Some(entry.data_mut())
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// the node vector is already a topological order of the computation.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Fails with a numeric error naming `stage` if `v` holds a NaN or infinity.
    pub fn ensure_finite(&self, v: Var, stage: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric {
                stage: stage.to_string(),
            })
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = check_matmul(self.shape(a), self.shape(b))?;
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a * b^T` for `a: [m x k]`, `b: [n x k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Shape {
                op: "matmul_bt",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_a_bt_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose()?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor {
            shape: va.shape().to_vec(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a `[cols]` vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(bias).len() != cols {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data.chunks_mut(cols.max(1)) {
            kernels::add_assign(row, &b);
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// Multiplies row `r` of `x` by `factors[r]`.
    pub fn scale_rows(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        let rows = self.value(x).rows();
        if factors.len() != rows {
            return Err(Error::Shape {
                op: "scale_rows",
                lhs: self.shape(x).to_vec(),
                rhs: vec![factors.len()],
            });
        }
        let mut t = self.value(x).clone();
        let cols = t.cols();
        for (row, &f) in t.data.chunks_mut(cols.max(1)).zip(&factors) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::ScaleRows(x, factors), rg))
    }

    /// Keeps entries where `keep` is true and writes an exact zero elsewhere.
    pub fn mask(&mut self, x: Var, keep: Vec<bool>) -> Result<Var> {
        if keep.len() != self.value(x).len() {
            return Err(Error::Shape {
                op: "mask",
                lhs: self.shape(x).to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let mut t = self.value(x).clone();
        for (v, &k) in t.data.iter_mut().zip(&keep) {
            if !k {
                *v = T::zero();
            }
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::Mask(x, keep), rg))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(silu);
        let rg = self.rg(x);
        self.push(t, Op::Silu(x), rg)
    }

    /// Normalizes each row over the last dimension, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let d = self.value(x).cols();
        if d == 0 {
            return Err(Error::EmptyDimension { op: "layer_norm" });
        }
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        if eps <= T::zero() {
            return Err(Error::Config("layer_norm eps must be positive".into()));
        }
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.rows();
        let dn = T::from_usize(d).expect("dimension fits scalar");
        let mut out = vec![T::zero(); rows * d];
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[r * d + c] = h;
                out[r * d + c] = g[c] * h + b[c];
            }
        }
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data: out,
        };
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise softmax over the last dimension. Entries where `mask` is false
    /// are excluded from the normalization and come out as exact zeros.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(Error::Shape {
                    op: "softmax_rows",
                    lhs: xv.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let rows = xv.rows();
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let keep = |c: usize| mask.map_or(true, |m| m[r * cols + c]);
            let mut max = T::neg_infinity();
            let mut any = false;
            for (c, &v) in row.iter().enumerate() {
                if keep(c) {
                    any = true;
                    if v > max {
                        max = v;
                    }
                }
            }
            if !any {
                return Err(Error::DegenerateRow { row: r });
            }
            let mut total = T::zero();
            for (c, &v) in row.iter().enumerate() {
                if keep(c) {
                    let e = (v - max).exp();
                    out[r * cols + c] = e;
                    total += e;
                }
            }
            for o in &mut out[r * cols..(r + 1) * cols] {
                *o /= total;
            }
        }
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data: out,
        };
        let rg = self.rg(x);
        Ok(self.push(t, Op::SoftmaxRows(x), rg))
    }

    /// Row lookup: output row `r` is `src[idx[r]]`, or zeros for `None`.
    pub fn gather_rows(&mut self, src: Var, idx: Vec<Option<usize>>) -> Result<Var> {
        let sv = self.value(src);
        let (rows, cols) = (sv.rows(), sv.cols());
        let mut out = vec![T::zero(); idx.len() * cols];
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= rows {
                    return Err(Error::Vocab {
                        channel: "gather_rows",
                        id: i,
                        size: rows,
                    });
                }
                out[r * cols..(r + 1) * cols].copy_from_slice(sv.row(i));
            }
        }
        let t = Tensor::new(vec![idx.len(), cols], out)?;
        let rg = self.rg(src);
        Ok(self.push(t, Op::GatherRows(src, idx), rg))
    }

    /// Elementwise lookup into the flattened `src`; `None` reads as zero.
    pub fn gather_scalars(
        &mut self,
        src: Var,
        idx: Vec<Option<usize>>,
        shape: Vec<usize>,
    ) -> Result<Var> {
        let sv = self.value(src).data();
        let mut out = vec![T::zero(); idx.len()];
        for (o, i) in out.iter_mut().zip(&idx) {
            if let Some(i) = *i {
                *o = *sv.get(i).ok_or(Error::Vocab {
                    channel: "gather_scalars",
                    id: i,
                    size: sv.len(),
                })?;
            }
        }
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(src);
        Ok(self.push(t, Op::GatherScalars(src, idx), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if start + len > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let t = Tensor::new(vec![rows, len], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::SliceCols { x, start }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if start + len > rows {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = xv.data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::new(vec![len, cols], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::SliceRows { x, start }, rg))
    }

    /// Same data viewed under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::Config("concat_cols of nothing".into()))?;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![rows, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Rotates consecutive column pairs of row `r` by `positions[r] * base^(-2i/cols)`.
    pub fn rope(&mut self, x: Var, positions: &[usize], base: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if cols % 2 != 0 {
            return Err(Error::Config(format!(
                "rope needs an even per-head dimension, got {cols}"
            )));
        }
        if positions.len() != rows {
            return Err(Error::Shape {
                op: "rope",
                lhs: xv.shape().to_vec(),
                rhs: vec![positions.len()],
            });
        }
        let half = cols / 2;
        let mut cos = vec![T::zero(); rows * half];
        let mut sin = vec![T::zero(); rows * half];
        for (r, &p) in positions.iter().enumerate() {
            for i in 0..half {
                let theta = base.powf(-2.0 * i as f64 / cols as f64);
                let angle = p as f64 * theta;
                cos[r * half + i] = T::from_f64_lossy(angle.cos());
                sin[r * half + i] = T::from_f64_lossy(angle.sin());
            }
        }
        let mut out = xv.clone();
        for r in 0..rows {
            let row = out.row_mut(r);
            for i in 0..half {
                let (c, s) = (cos[r * half + i], sin[r * half + i]);
                let (a, b) = (row[2 * i], row[2 * i + 1]);
                row[2 * i] = a * c - b * s;
                row[2 * i + 1] = a * s + b * c;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Rope { x, cos, sin }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::from_usize(n).expect("count fits scalar"))
    }

    /// Row sums: `[rows x cols] -> [rows x 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let rows = xv.rows();
        let out: Vec<T> = (0..rows).map(|r| xv.row(r).iter().copied().sum()).collect();
        let t = Tensor {
            shape: vec![rows, 1],
            data: out,
        };
        let rg = self.rg(x);
        self.push(t, Op::SumCols(x), rg)
    }

    /// Sum over rows of `logsumexp(row) - row[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![T::zero(); rows * cols];
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::Vocab {
                    channel: "target",
                    id: t,
                    size: cols,
                });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * cols + c] = e;
                total += e;
            }
            for p in &mut probs[r * cols..(r + 1) * cols] {
                *p /= total;
            }
            loss += max + total.ln() - row[t];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            },
            rg,
        ))
    }

    /// Sum of binary cross-entropy between `sigmoid(logits)` and `labels`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Vec<T>) -> Result<Var> {
        let lv = self.value(logits);
        if labels.len() != lv.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let loss = lv
            .data()
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum::<T>();
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, labels }, rg))
    }

    /// Clears gradients so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Reverse pass from a scalar `loss`, visiting every node once in reverse
    /// creation order and accumulating gradients additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(grad) = self.grads[id].take() else {
                continue;
            };
            self.backprop_node(id, &grad);
            self.grads[id] = Some(grad);
        }
        self.backward_done = true;
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<&Tensor<T>> {
        if !self.backward_done {
            return Err(Error::NoBackward);
        }
        self.grads
            .get(v.0)
            .and_then(Option::as_ref)
            .filter(|_| self.nodes[v.0].requires_grad)
            .ok_or(Error::Detached { node: v.0 })
    }

    fn backprop_node(&mut self, id: usize, g: &Tensor<T>) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[id];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(da) = slot(nodes, grads, *a) {
                    kernels::matmul_a_bt_acc(gd, bv.data(), m, n, k, da);
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    kernels::matmul_at_b_acc(av.data(), gd, m, k, n, db);
                }
            }
            Op::MatMulBt(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                if let Some(da) = slot(nodes, grads, *a) {
                    kernels::matmul_acc(gd, bv.data(), m, n, k, da);
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    kernels::matmul_at_b_acc(gd, av.data(), m, n, k, db);
                }
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                if let Some(dx) = slot(nodes, grads, *x) {
                    let mut t = vec![T::zero(); gd.len()];
                    kernels::transpose(gd, s[0], s[1], &mut t);
                    kernels::add_assign(dx, &t);
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    kernels::add_assign(da, gd);
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    kernels::add_assign(db, gd);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    kernels::add_assign(da, gd);
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    for (d, &v) in db.iter_mut().zip(gd) {
                        *d -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(da) = slot(nodes, grads, *a) {
                    for ((d, &v), &o) in da.iter_mut().zip(gd).zip(bv) {
                        *d += v * o;
                    }
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    for ((d, &v), &o) in db.iter_mut().zip(gd).zip(av) {
                        *d += v * o;
                    }
                }
            }
            Op::AddBias(x, bias) => {
                let cols = node.value.cols();
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::add_assign(dx, gd);
                }
                if let Some(db) = slot(nodes, grads, *bias) {
                    for row in gd.chunks(cols.max(1)) {
                        kernels::add_assign(db, row);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (d, &v) in dx.iter_mut().zip(gd) {
                        *d += v * *c;
                    }
                }
            }
            Op::ScaleRows(x, factors) => {
                let cols = node.value.cols().max(1);
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((drow, grow), &f) in dx.chunks_mut(cols).zip(gd.chunks(cols)).zip(factors)
                    {
                        for (d, &v) in drow.iter_mut().zip(grow) {
                            *d += v * f;
                        }
                    }
                }
            }
            Op::Mask(x, keep) => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, &v), &k) in dx.iter_mut().zip(gd).zip(keep) {
                        if k {
                            *d += v;
                        }
                    }
                }
            }
            Op::Silu(x) => {
                let xv = nodes[x.0].value.data();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, &v), &xi) in dx.iter_mut().zip(gd).zip(xv) {
                        let s = sigmoid(xi);
                        *d += v * s * (T::one() + xi * (T::one() - s));
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let rows = node.value.rows();
                let gam = nodes[gamma.0].value.data();
                if let Some(dg) = slot(nodes, grads, *gamma) {
                    for r in 0..rows {
                        for c in 0..d {
                            dg[c] += gd[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if let Some(db) = slot(nodes, grads, *beta) {
                    for row in gd.chunks(d) {
                        kernels::add_assign(db, row);
                    }
                }
                if let Some(dx) = slot(nodes, grads, *x) {
                    let dn = T::from_usize(d).expect("dimension fits scalar");
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rows {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for c in 0..d {
                            let v = gd[r * d + c] * gam[c];
                            dxhat[c] = v;
                            s1 += v;
                            s2 += v * xhat[r * d + c];
                        }
                        let k = inv_std[r] / dn;
                        for c in 0..d {
                            dx[r * d + c] += k * (dn * dxhat[c] - s1 - xhat[r * d + c] * s2);
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let cols = node.value.cols().max(1);
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((drow, grow), yrow) in
                        dx.chunks_mut(cols).zip(gd.chunks(cols)).zip(y.chunks(cols))
                    {
                        let dot = kernels::dot(grow, yrow);
                        for ((d, &g), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (g - dot);
                        }
                    }
                }
            }
            Op::GatherRows(src, idx) => {
                let cols = node.value.cols();
                if let Some(ds) = slot(nodes, grads, *src) {
                    for (r, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            kernels::add_assign(
                                &mut ds[i * cols..(i + 1) * cols],
                                &gd[r * cols..(r + 1) * cols],
                            );
                        }
                    }
                }
            }
            Op::GatherScalars(src, idx) => {
                if let Some(ds) = slot(nodes, grads, *src) {
                    for (e, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            ds[i] += gd[e];
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let len = node.value.cols();
                let cols = nodes[x.0].value.cols();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (r, grow) in gd.chunks(len.max(1)).enumerate() {
                        kernels::add_assign(&mut dx[r * cols + start..r * cols + start + len], grow);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let cols = node.value.cols();
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::add_assign(&mut dx[start * cols..start * cols + gd.len()], gd);
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::add_assign(dx, gd);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    if let Some(dp) = slot(nodes, grads, *p) {
                        for (r, drow) in dp.chunks_mut(w.max(1)).enumerate() {
                            kernels::add_assign(drow, &gd[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Rope { x, cos, sin } => {
                let cols = node.value.cols();
                let half = cols / 2;
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (r, (drow, grow)) in dx.chunks_mut(cols).zip(gd.chunks(cols)).enumerate() {
                        for i in 0..half {
                            let (c, s) = (cos[r * half + i], sin[r * half + i]);
                            let (g0, g1) = (grow[2 * i], grow[2 * i + 1]);
                            drow[2 * i] += g0 * c + g1 * s;
                            drow[2 * i + 1] += g1 * c - g0 * s;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    dx.iter_mut().for_each(|d| *d += gd[0]);
                }
            }
            Op::SumCols(x) => {
                let cols = nodes[x.0].value.cols().max(1);
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (drow, &g) in dx.chunks_mut(cols).zip(gd) {
                        drow.iter_mut().for_each(|d| *d += g);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let cols = nodes[logits.0].value.cols();
                if let Some(dl) = slot(nodes, grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..cols {
                            let mut v = probs[r * cols + c];
                            if c == t {
                                v -= T::one();
                            }
                            dl[r * cols + c] += gd[0] * v;
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, labels } => {
                let zv = nodes[logits.0].value.data();
                if let Some(dl) = slot(nodes, grads, *logits) {
                    for ((d, &z), &y) in dl.iter_mut().zip(zv).zip(labels) {
                        *d += gd[0] * (sigmoid(z) - y);
                    }
                }
            }
        }
    }
}
