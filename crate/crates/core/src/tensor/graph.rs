//! Tape-based reverse-mode differentiation.
//!
//! Operations evaluate eagerly and append a node to the tape. Node inputs
//! always have smaller indices, so one reverse sweep over the tape visits
//! each node exactly once in topological order. Gradients propagate only
//! into subtrees that contain a `requires_grad` leaf.

use crate::error::{Error, Result};
use crate::tensor::{gemm, DType, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        eps: f64,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    Transpose(usize),
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    MaxOverRows {
        x: usize,
        argmax: Vec<usize>,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    PickPerRow {
        x: usize,
        ids: Vec<usize>,
    },
    WeightedSum {
        x: usize,
        weights: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

/// A single-use computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn gelu_scalar(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Insert a leaf holding a copy of `t`.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, t.clone(), requires_grad)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    /// Gradient at `v` after [`Graph::backward`], if one was produced.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::from_vec(node.value.shape(), g.clone(), DType::F64).expect("grad shape")
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check_2d(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.val(v);
        match t.shape().len() {
            1 | 2 => Ok((t.rows(), t.cols())),
            _ => Err(Error::BadShape {
                op,
                expected: "1-d or 2-d tensor".into(),
                got: t.shape().to_vec(),
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.check_2d("matmul", a)?;
        let (kb, n) = self.check_2d("matmul", b)?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.val(a).shape().to_vec(),
                rhs: self.val(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            ka,
            n,
            1.0,
            self.val(a).data(),
            false,
            self.val(b).data(),
            false,
            0.0,
            &mut out,
        );
        let rg = self.needs(a) || self.needs(b);
        let t = Tensor::from_vec(&[m, n], out, DType::F64)?;
        Ok(self.push(Op::MatMul(a.0, b.0), t, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.val(a).shape().to_vec(),
                rhs: self.val(b).shape().to_vec(),
            });
        }
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.val(a).shape(), data, DType::F64)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a.0, b.0), t, rg))
    }

    /// Broadcast-add a length-`c` bias to each row of an `r x c` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.check_2d("add_row", x)?;
        if self.val(bias).numel() != c {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.val(x).shape().to_vec(),
                rhs: self.val(bias).shape().to_vec(),
            });
        }
        let mut data = self.val(x).data().to_vec();
        let b = self.val(bias).data();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += b[j];
            }
        }
        let t = Tensor::from_vec(self.val(x).shape(), data, DType::F64)?;
        let rg = self.needs(x) || self.needs(bias);
        Ok(self.push(Op::AddRow(x.0, bias.0), t, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.val(a).shape().to_vec(),
                rhs: self.val(b).shape().to_vec(),
            });
        }
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.val(a).shape(), data, DType::F64)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a.0, b.0), t, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.val(x).data().iter().map(|v| v * c).collect();
        let t = Tensor::from_vec(self.val(x).shape(), data, DType::F64)?;
        let rg = self.needs(x);
        Ok(self.push(Op::Scale(x.0, c), t, rg))
    }

    /// GeLU, exact erf form.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self.val(x).data().iter().map(|&v| gelu_scalar(v)).collect();
        let t = Tensor::from_vec(self.val(x).shape(), data, DType::F64)?;
        let rg = self.needs(x);
        Ok(self.push(Op::Gelu(x.0), t, rg))
    }

    fn softmax_rows(&self, x: Var, log: bool) -> (usize, usize, Vec<f64>) {
        let (r, c) = (self.val(x).rows(), self.val(x).cols());
        let xs = self.val(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &v in row {
                z += (v - m).exp();
            }
            for j in 0..c {
                let e = row[j] - m;
                out[i * c + j] = if log { e - z.ln() } else { e.exp() / z };
            }
        }
        (r, c, out)
    }

    /// Softmax over the last axis (per row of a 2-D tensor).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_2d("softmax", x)?;
        let (_, _, out) = self.softmax_rows(x, false);
        let t = Tensor::from_vec(self.val(x).shape(), out, DType::F64)?;
        let rg = self.needs(x);
        Ok(self.push(Op::Softmax(x.0), t, rg))
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_2d("log_softmax", x)?;
        let (_, _, out) = self.softmax_rows(x, true);
        let t = Tensor::from_vec(self.val(x).shape(), out, DType::F64)?;
        let rg = self.needs(x);
        Ok(self.push(Op::LogSoftmax(x.0), t, rg))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.check_2d("layer_norm", x)?;
        if self.val(gain).numel() != c || self.val(bias).numel() != c {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.val(x).shape().to_vec(),
                rhs: self.val(gain).shape().to_vec(),
            });
        }
        let xs = self.val(x).data();
        let g = self.val(gain).data();
        let b = self.val(bias).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let t = Tensor::from_vec(self.val(x).shape(), out, DType::F64)?;
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                eps,
            },
            t,
            rg,
        ))
    }

    /// Concatenate 2-D tensors along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows of nothing".into()));
        }
        let c = self.check_2d("concat_rows", parts[0])?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pc) = self.check_2d("concat_rows", p)?;
            if pc != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, c],
                    rhs: self.val(p).shape().to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(self.val(p).data());
        }
        let t = Tensor::from_vec(&[rows, c], data, DType::F64)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatRows(parts.iter().map(|p| p.0).collect()), t, rg))
    }

    /// Concatenate 2-D tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_cols of nothing".into()));
        }
        let r = self.check_2d("concat_cols", parts[0])?.0;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.check_2d("concat_cols", p)?;
            if pr != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![r, cols],
                    rhs: self.val(p).shape().to_vec(),
                });
            }
            cols += pc;
        }
        let mut data = vec![0.0; r * cols];
        let mut off = 0;
        for &p in parts {
            let pc = self.val(p).cols();
            for i in 0..r {
                let src = self.val(p).row(i);
                data[i * cols + off..i * cols + off + pc].copy_from_slice(src);
            }
            off += pc;
        }
        let t = Tensor::from_vec(&[r, cols], data, DType::F64)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect()), t, rg))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.check_2d("slice_rows", x)?;
        if start >= end || end > r {
            return Err(Error::InvalidArgument(format!(
                "slice_rows {start}..{end} out of 0..{r}"
            )));
        }
        let data = self.val(x).data()[start * c..end * c].to_vec();
        let t = Tensor::from_vec(&[end - start, c], data, DType::F64)?;
        let rg = self.needs(x);
        Ok(self.push(Op::SliceRows { x: x.0, start }, t, rg))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.check_2d("slice_cols", x)?;
        if start >= end || end > c {
            return Err(Error::InvalidArgument(format!(
                "slice_cols {start}..{end} out of 0..{c}"
            )));
        }
        let w = end - start;
        let mut data = vec![0.0; r * w];
        for i in 0..r {
            data[i * w..(i + 1) * w].copy_from_slice(&self.val(x).row(i)[start..end]);
        }
        let t = Tensor::from_vec(&[r, w], data, DType::F64)?;
        let rg = self.needs(x);
        Ok(self.push(Op::SliceCols { x: x.0, start }, t, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.check_2d("transpose", x)?;
        let xs = self.val(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xs[i * c + j];
            }
        }
        let t = Tensor::from_vec(&[c, r], data, DType::F64)?;
        let rg = self.needs(x);
        Ok(self.push(Op::Transpose(x.0), t, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.val(x).reshaped(shape)?;
        let rg = self.needs(x);
        Ok(self.push(Op::Reshape(x.0), t, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.val(x).data().iter().sum();
        let rg = self.needs(x);
        Ok(self.push(Op::Sum(x.0), Tensor::scalar(s), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.val(x).numel();
        if n == 0 {
            return Err(Error::InvalidArgument("mean of empty tensor".into()));
        }
        let s: f64 = self.val(x).data().iter().sum::<f64>() / n as f64;
        let rg = self.needs(x);
        Ok(self.push(Op::Mean(x.0), Tensor::scalar(s), rg))
    }

    /// Columnwise max over rows; ties resolve to the lowest row index.
    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.check_2d("max_over_rows", x)?;
        let xs = self.val(x).data();
        let mut out = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for i in 0..r {
            for j in 0..c {
                let v = xs[i * c + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let t = Tensor::from_vec(&[c], out, DType::F64)?;
        let rg = self.needs(x);
        Ok(self.push(Op::MaxOverRows { x: x.0, argmax }, t, rg))
    }

    /// Select rows of a 2-D table by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.check_2d("gather_rows", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows index {bad} out of 0..{r}"
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(self.val(table).row(i));
        }
        let t = Tensor::from_vec(&[ids.len(), c], data, DType::F64)?;
        let rg = self.needs(table);
        Ok(self.push(
            Op::GatherRows {
                table: table.0,
                ids: ids.to_vec(),
            },
            t,
            rg,
        ))
    }

    /// out[i] = x[i, ids[i]].
    pub fn pick_per_row(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.check_2d("pick_per_row", x)?;
        if ids.len() != r {
            return Err(Error::InvalidArgument(format!(
                "pick_per_row: {} ids for {r} rows",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= c) {
            return Err(Error::InvalidArgument(format!(
                "pick_per_row index {bad} out of 0..{c}"
            )));
        }
        let data = ids
            .iter()
            .enumerate()
            .map(|(i, &j)| self.val(x).get2(i, j))
            .collect();
        let t = Tensor::from_vec(&[r], data, DType::F64)?;
        let rg = self.needs(x);
        Ok(self.push(
            Op::PickPerRow {
                x: x.0,
                ids: ids.to_vec(),
            },
            t,
            rg,
        ))
    }

    /// Fixed-weight inner product with the flattened tensor; scalar output.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.val(x).numel() {
            return Err(Error::InvalidArgument(format!(
                "weighted_sum: {} weights for {} elements",
                weights.len(),
                self.val(x).numel()
            )));
        }
        let s: f64 = self
            .val(x)
            .data()
            .iter()
            .zip(weights)
            .map(|(v, w)| v * w)
            .sum();
        let rg = self.needs(x);
        Ok(self.push(
            Op::WeightedSum {
                x: x.0,
                weights: weights.to_vec(),
            },
            Tensor::scalar(s),
            rg,
        ))
    }

    /// Mean cross-entropy of rows of `logits` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, _) = self.check_2d("cross_entropy", logits)?;
        if targets.len() != r {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        let lp = self.log_softmax(logits)?;
        let picked = self.pick_per_row(lp, targets)?;
        let w = vec![-1.0 / r as f64; r];
        self.weighted_sum(picked, &w)
    }

    /// Reverse sweep from a scalar loss; fills gradients of every node that
    /// both influences the loss and sits above a `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.val(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.val(loss).shape().to_vec()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let grad = self.nodes[i].grad.take().unwrap();
            self.propagate(i, &grad);
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn add_grad(&mut self, node: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[node].requires_grad {
            return;
        }
        let n = self.nodes[node].value.numel();
        if self.nodes[node].grad.is_none() {
            self.nodes[node].grad = Some(vec![0.0; n]);
        }
        f(self.nodes[node].grad.as_mut().unwrap());
    }

    fn propagate(&mut self, i: usize, dy: &[f64]) {
        // Ops read their input values before mutating gradient buffers, so
        // the borrow gymnastics below clone small slices where needed.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let m = self.nodes[a].value.rows();
                let k = self.nodes[a].value.cols();
                let n = self.nodes[b].value.cols();
                if self.nodes[a].requires_grad {
                    let bv = self.nodes[b].value.data().to_vec();
                    self.add_grad(a, |ga| gemm(m, n, k, 1.0, dy, false, &bv, true, 1.0, ga));
                }
                if self.nodes[b].requires_grad {
                    let av = self.nodes[a].value.data().to_vec();
                    self.add_grad(b, |gb| gemm(k, m, n, 1.0, &av, true, dy, false, 1.0, gb));
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.add_grad(a, |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += di;
                    }
                });
                self.add_grad(b, |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += di;
                    }
                });
            }
            Op::AddRow(x, bias) => {
                let (x, bias) = (*x, *bias);
                let c = self.nodes[x].value.cols();
                self.add_grad(x, |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += di;
                    }
                });
                self.add_grad(bias, |g| {
                    for (idx, di) in dy.iter().enumerate() {
                        g[idx % c] += di;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a].requires_grad {
                    let bv = self.nodes[b].value.data().to_vec();
                    self.add_grad(a, |g| {
                        for ((gi, di), bi) in g.iter_mut().zip(dy).zip(&bv) {
                            *gi += di * bi;
                        }
                    });
                }
                if self.nodes[b].requires_grad {
                    let av = self.nodes[a].value.data().to_vec();
                    self.add_grad(b, |g| {
                        for ((gi, di), ai) in g.iter_mut().zip(dy).zip(&av) {
                            *gi += di * ai;
                        }
                    });
                }
            }
            Op::Scale(x, c) => {
                let (x, c) = (*x, *c);
                self.add_grad(x, |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += di * c;
                    }
                });
            }
            Op::Gelu(x) => {
                let x = *x;
                let xv = self.nodes[x].value.data().to_vec();
                self.add_grad(x, |g| {
                    for ((gi, di), xi) in g.iter_mut().zip(dy).zip(&xv) {
                        *gi += di * gelu_grad_scalar(*xi);
                    }
                });
            }
            Op::Softmax(x) => {
                let x = *x;
                let y = self.nodes[i].value.clone();
                let (r, c) = (y.rows(), y.cols());
                self.add_grad(x, |g| {
                    for row in 0..r {
                        let yr = y.row(row);
                        let dr = &dy[row * c..(row + 1) * c];
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            g[row * c + j] += yr[j] * (dr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let x = *x;
                let y = self.nodes[i].value.clone();
                let (r, c) = (y.rows(), y.cols());
                self.add_grad(x, |g| {
                    for row in 0..r {
                        let yr = y.row(row);
                        let dr = &dy[row * c..(row + 1) * c];
                        let s: f64 = dr.iter().sum();
                        for j in 0..c {
                            g[row * c + j] += dr[j] - yr[j].exp() * s;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (x, gain, bias, eps) = (*x, *gain, *bias, *eps);
                let xv = self.nodes[x].value.clone();
                let gv = self.nodes[gain].value.data().to_vec();
                let (r, c) = (xv.rows(), xv.cols());
                // Recompute per-row statistics; cheaper than caching them.
                let mut xhat = vec![0.0; r * c];
                let mut inv_std = vec![0.0; r];
                for row in 0..r {
                    let xr = xv.row(row);
                    let mean = xr.iter().sum::<f64>() / c as f64;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    inv_std[row] = inv;
                    for j in 0..c {
                        xhat[row * c + j] = (xr[j] - mean) * inv;
                    }
                }
                self.add_grad(bias, |g| {
                    for (idx, di) in dy.iter().enumerate() {
                        g[idx % c] += di;
                    }
                });
                self.add_grad(gain, |g| {
                    for (idx, di) in dy.iter().enumerate() {
                        g[idx % c] += di * xhat[idx];
                    }
                });
                self.add_grad(x, |g| {
                    for row in 0..r {
                        let dr = &dy[row * c..(row + 1) * c];
                        let xh = &xhat[row * c..(row + 1) * c];
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for j in 0..c {
                            let dxh = dr[j] * gv[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh /= c as f64;
                        mean_dxh_xh /= c as f64;
                        for j in 0..c {
                            let dxh = dr[j] * gv[j];
                            g[row * c + j] += inv_std[row] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p].value.numel();
                    let slice = dy[off..off + n].to_vec();
                    self.add_grad(p, |g| {
                        for (gi, di) in g.iter_mut().zip(&slice) {
                            *gi += di;
                        }
                    });
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let r = self.nodes[i].value.rows();
                let total_c = self.nodes[i].value.cols();
                let mut off = 0;
                for p in parts {
                    let pc = self.nodes[p].value.cols();
                    let mut slice = vec![0.0; r * pc];
                    for row in 0..r {
                        slice[row * pc..(row + 1) * pc]
                            .copy_from_slice(&dy[row * total_c + off..row * total_c + off + pc]);
                    }
                    self.add_grad(p, |g| {
                        for (gi, di) in g.iter_mut().zip(&slice) {
                            *gi += di;
                        }
                    });
                    off += pc;
                }
            }
            Op::SliceRows { x, start } => {
                let (x, start) = (*x, *start);
                let c = self.nodes[x].value.cols();
                self.add_grad(x, |g| {
                    for (idx, di) in dy.iter().enumerate() {
                        g[start * c + idx] += di;
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (x, start) = (*x, *start);
                let c = self.nodes[x].value.cols();
                let w = self.nodes[i].value.cols();
                let r = self.nodes[i].value.rows();
                self.add_grad(x, |g| {
                    for row in 0..r {
                        for j in 0..w {
                            g[row * c + start + j] += dy[row * w + j];
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let x = *x;
                let (r, c) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
                self.add_grad(x, |g| {
                    for row in 0..r {
                        for j in 0..c {
                            g[row * c + j] += dy[j * r + row];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                let x = *x;
                self.add_grad(x, |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += di;
                    }
                });
            }
            Op::Sum(x) => {
                let x = *x;
                let d = dy[0];
                self.add_grad(x, |g| {
                    for gi in g.iter_mut() {
                        *gi += d;
                    }
                });
            }
            Op::Mean(x) => {
                let x = *x;
                let n = self.nodes[x].value.numel() as f64;
                let d = dy[0] / n;
                self.add_grad(x, |g| {
                    for gi in g.iter_mut() {
                        *gi += d;
                    }
                });
            }
            Op::MaxOverRows { x, argmax } => {
                let x = *x;
                let argmax = argmax.clone();
                let c = self.nodes[x].value.cols();
                self.add_grad(x, |g| {
                    for (j, &row) in argmax.iter().enumerate() {
                        g[row * c + j] += dy[j];
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let (table, ids) = (*table, ids.clone());
                let c = self.nodes[table].value.cols();
                self.add_grad(table, |g| {
                    for (out_row, &src_row) in ids.iter().enumerate() {
                        for j in 0..c {
                            g[src_row * c + j] += dy[out_row * c + j];
                        }
                    }
                });
            }
            Op::PickPerRow { x, ids } => {
                let (x, ids) = (*x, ids.clone());
                let c = self.nodes[x].value.cols();
                self.add_grad(x, |g| {
                    for (row, &col) in ids.iter().enumerate() {
                        g[row * c + col] += dy[row];
                    }
                });
            }
            Op::WeightedSum { x, weights } => {
                let (x, weights) = (*x, weights.clone());
                let d = dy[0];
                self.add_grad(x, |g| {
                    for (gi, wi) in g.iter_mut().zip(&weights) {
                        *gi += d * wi;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec(), DType::F64).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let mut rng = stream(1, &[]);
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng, DType::F64);
        let i = g.constant(&eye);
        let av = g.constant(&a);
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::zeros(&[2, 3], DType::F64));
        let b = g.constant(&Tensor::zeros(&[4, 2], DType::F64));
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn softmax_symmetric_input() {
        let mut g = Graph::new();
        let x = g.constant(&t1(&[0.0, 0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = stream(5, &[]);
        let mut g = Graph::new();
        let x = g.constant(&Tensor::randn(&[7, 11], 3.0, &mut rng, DType::F64));
        let y = g.softmax(x).unwrap();
        let yv = g.value(y);
        for r in 0..7 {
            let s: f64 = yv.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(yv.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn gelu_fixed_point_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(&t1(&[0.0]));
        let y = g.gelu(x).unwrap();
        assert_eq!(g.value(y).data()[0], 0.0);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(&t1(&[1.0, 2.0, 3.0]), true);
        let loss = g.sum(x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_half_square_is_identity() {
        let mut g = Graph::new();
        let xv = t1(&[1.5, -2.0, 0.25]);
        let x = g.leaf(&xv, true);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let loss = g.scale(s, 0.5).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        for (a, b) in grad.data().iter().zip(xv.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(&t1(&[1.0, 2.0]), true);
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn backward_is_deterministic_across_rebuilds() {
        let run = || {
            let mut rng = stream(9, &[4]);
            let mut g = Graph::new();
            let w = g.leaf(&Tensor::randn(&[4, 4], 1.0, &mut rng, DType::F64), true);
            let x = g.constant(&Tensor::randn(&[2, 4], 1.0, &mut rng, DType::F64));
            let h = g.matmul(x, w).unwrap();
            let a = g.gelu(h).unwrap();
            let loss = g.mean(a).unwrap();
            g.backward(loss).unwrap();
            g.grad(w).unwrap().data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_v() {
        let mut g = Graph::new();
        let v = 17;
        let logits = g.leaf(&Tensor::zeros(&[3, v], DType::F64), true);
        let loss = g.cross_entropy(logits, &[0, 5, 16]).unwrap();
        g.backward(loss).unwrap();
        assert!((g.value(loss).item() - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_on_slice_propagates_into_full_tensor() {
        let mut rng = stream(21, &[]);
        let mut g = Graph::new();
        let logits = g.leaf(&Tensor::randn(&[5, 7], 1.0, &mut rng, DType::F64), true);
        let tail = g.slice_rows(logits, 3, 5).unwrap();
        let loss = g.cross_entropy(tail, &[2, 6]).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(logits).unwrap();
        // Rows 0..3 got no gradient, rows 3..5 did.
        assert!(grad.row(0).iter().all(|&v| v == 0.0));
        assert!(grad.row(3).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn max_over_rows_ties_take_lowest_row() {
        let mut g = Graph::new();
        let x = g.leaf(
            &Tensor::matrix(2, 2, vec![1.0, 5.0, 1.0, 3.0]).unwrap(),
            true,
        );
        let m = g.max_over_rows(x).unwrap();
        let s = g.sum(m).unwrap();
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        // Column 0 ties at 1.0: gradient goes to row 0.
        assert_eq!(grad.data(), &[1.0, 1.0, 0.0, 0.0]);
    }
}
