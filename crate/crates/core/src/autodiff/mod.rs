//! Define-by-run reverse-mode differentiation over [`DenseMatrix`] values.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each recorded node holds its
//! value and the operation that produced it; [`Tape::backward`] walks the
//! nodes in exact reverse order of creation, so inputs are always visited
//! after every consumer has pushed its contribution.

mod gradcheck;
mod ops;

use std::sync::Arc;

use crate::error::{GnnMoeError, Result};
use crate::tensor::{DenseMatrix, SparseMatrix};

pub use gradcheck::{grad_check, grad_check_sampled, relative_error};
pub use ops::{top_k_indices, ElementwiseKind, Operand, LAYER_NORM_EPS, LEAKY_RELU_SLOPE};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Unary {
    Relu,
    LeakyRelu,
    Sigmoid,
    Swish,
    Gelu,
    Log,
    Exp,
}

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    /// `mul * x + offset`; only the slope is needed backward.
    Affine(Var, f64),
    Unary(Var, Unary),
    RowSoftmax {
        x: Var,
        temperature: f64,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: DenseMatrix,
        inv_std: Vec<f64>,
    },
    Dropout(Var, DenseMatrix),
    MeanRows(Var),
    SumAll(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: DenseMatrix,
        targets: Vec<(usize, usize)>,
    },
    /// Straight-through: backward uses the soft relaxation regardless of the
    /// forward value.
    GumbelSoftmax {
        logits: Var,
        soft: DenseMatrix,
        temperature: f64,
    },
    TopKSoftmax(Var),
    ScaleRowsByColumn {
        h: Var,
        weights: Var,
        col: usize,
    },
    ScaleByEntry {
        h: Var,
        s: Var,
        row: usize,
        col: usize,
    },
    MeanEntropy {
        inputs: Vec<Var>,
        clamp: f64,
        count: usize,
    },
    Attention {
        h: Var,
        a_src: Var,
        a_dst: Var,
        pattern: Arc<SparseMatrix>,
        alpha: Vec<f64>,
        pre_act: Vec<f64>,
    },
}

struct Node {
    value: DenseMatrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<DenseMatrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input (a parameter or anything we want a gradient for).
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Constant copy of `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient of the last `backward` call's loss w.r.t. `v`; zeros when `v`
    /// was not reached.
    pub fn grad(&self, v: Var) -> DenseMatrix {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.value(v).shape();
                DenseMatrix::zeros(r, c)
            }
        }
    }

    fn push_raw(&mut self, value: DenseMatrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an op output after checking it is finite.
    fn push(&mut self, name: &'static str, value: DenseMatrix, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(GnnMoeError::NonFinite(name));
        }
        let needs_grad = inputs.iter().any(|&v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    /// Populates gradients of every node reachable from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(GnnMoeError::dim("backward", "1x1 loss", format!("{}x{}", shape.0, shape.1)));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(DenseMatrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: DenseMatrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&mut self, i: usize, g: &DenseMatrix) -> Result<()> {
        // Temporarily detach the op so we can read it while mutating grads.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let out = self.backprop_op(i, &op, g);
        self.nodes[i].op = op;
        out
    }

    fn backprop_op(&mut self, i: usize, op: &Op, g: &DenseMatrix) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let da = g.matmul_t(self.value(*b))?;
                    self.accumulate(*a, da);
                }
                if self.wants(*b) {
                    let db = self.value(*a).t_matmul(g)?;
                    self.accumulate(*b, db);
                }
            }
            Op::SpMM(s, d) => {
                let dd = s.t_spmm(g)?;
                self.accumulate(*d, dd);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                let da = g.zip_map(self.value(*b), |x, y| x * y);
                let db = g.zip_map(self.value(*a), |x, y| x * y);
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Affine(a, mul) => {
                let m = *mul;
                self.accumulate(*a, g.map(|x| m * x));
            }
            Op::Unary(a, kind) => {
                let x = self.value(*a);
                let y = &self.nodes[i].value;
                let d = match kind {
                    Unary::Relu => g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }),
                    Unary::LeakyRelu => g.zip_map(x, |gi, xi| {
                        if xi > 0.0 {
                            gi
                        } else {
                            LEAKY_RELU_SLOPE * gi
                        }
                    }),
                    Unary::Sigmoid => g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi)),
                    Unary::Swish => g.zip_map(x, |gi, xi| {
                        let s = ops::sigmoid(xi);
                        gi * (s + xi * s * (1.0 - s))
                    }),
                    Unary::Gelu => g.zip_map(x, |gi, xi| gi * ops::gelu_grad(xi)),
                    Unary::Log => g.zip_map(x, |gi, xi| gi / xi),
                    Unary::Exp => g.zip_map(y, |gi, yi| gi * yi),
                };
                self.accumulate(*a, d);
            }
            Op::RowSoftmax { x, temperature } => {
                let y = &self.nodes[i].value;
                let dx = softmax_backward(y, g, 1.0 / temperature);
                self.accumulate(*x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let cols = xhat.cols();
                if self.wants(*gain) {
                    let mut dg = DenseMatrix::zeros(1, cols);
                    for r in 0..xhat.rows() {
                        for ((o, &gi), &xh) in dg.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += gi * xh;
                        }
                    }
                    self.accumulate(*gain, dg);
                }
                if self.wants(*bias) {
                    let mut db = DenseMatrix::zeros(1, cols);
                    for r in 0..g.rows() {
                        for (o, &gi) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gi;
                        }
                    }
                    self.accumulate(*bias, db);
                }
                if self.wants(*x) {
                    let gain_v = self.value(*gain);
                    let n = cols as f64;
                    let mut dx = DenseMatrix::zeros(xhat.rows(), cols);
                    for r in 0..xhat.rows() {
                        let dxhat: Vec<f64> = g.row(r).iter().zip(gain_v.data()).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / n;
                        for ((o, &d), &xh) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r)) {
                            *o = k * (n * d - sum_d - xh * sum_dx);
                        }
                    }
                    self.accumulate(*x, dx);
                }
            }
            Op::Dropout(a, mask) => {
                let d = g.zip_map(mask, |gi, m| gi * m);
                self.accumulate(*a, d);
            }
            Op::MeanRows(a) => {
                let (rows, cols) = self.value(*a).shape();
                let mut d = DenseMatrix::zeros(rows, cols);
                let scale = 1.0 / rows as f64;
                for r in 0..rows {
                    for (o, &gi) in d.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = gi * scale;
                    }
                }
                self.accumulate(*a, d);
            }
            Op::SumAll(a) => {
                let (rows, cols) = self.value(*a).shape();
                self.accumulate(*a, DenseMatrix::filled(rows, cols, g.item()));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
            } => {
                let upstream = g.item() / targets.len() as f64;
                let mut d = DenseMatrix::zeros(probs.rows(), probs.cols());
                for &(r, class) in targets {
                    for (o, &p) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                        *o = p * upstream;
                    }
                    let cur = d.get(r, class);
                    d.set(r, class, cur - upstream);
                }
                self.accumulate(*logits, d);
            }
            Op::GumbelSoftmax {
                logits,
                soft,
                temperature,
            } => {
                let d = softmax_backward(soft, g, 1.0 / temperature);
                self.accumulate(*logits, d);
            }
            Op::TopKSoftmax(x) => {
                // Entries outside the top-k are exactly zero in the output, so
                // the restricted softmax Jacobian is the full formula masked.
                let y = &self.nodes[i].value;
                let dx = softmax_backward(y, g, 1.0);
                self.accumulate(*x, dx);
            }
            Op::ScaleRowsByColumn { h, weights, col } => {
                if self.wants(*h) {
                    let wv = self.value(*weights);
                    let mut dh = g.clone();
                    for r in 0..dh.rows() {
                        let w = wv.get(r, *col);
                        dh.row_mut(r).iter_mut().for_each(|x| *x *= w);
                    }
                    self.accumulate(*h, dh);
                }
                if self.wants(*weights) {
                    let hv = self.value(*h);
                    let wv = self.value(*weights);
                    let mut dw = DenseMatrix::zeros(wv.rows(), wv.cols());
                    for r in 0..hv.rows() {
                        dw.set(r, *col, crate::tensor::dot(g.row(r), hv.row(r)));
                    }
                    self.accumulate(*weights, dw);
                }
            }
            Op::ScaleByEntry { h, s, row, col } => {
                let scale = self.value(*s).get(*row, *col);
                if self.wants(*h) {
                    self.accumulate(*h, g.map(|x| x * scale));
                }
                if self.wants(*s) {
                    let sv = self.value(*s);
                    let mut ds = DenseMatrix::zeros(sv.rows(), sv.cols());
                    ds.set(*row, *col, crate::tensor::dot(g.data(), self.value(*h).data()));
                    self.accumulate(*s, ds);
                }
            }
            Op::MeanEntropy {
                inputs,
                clamp,
                count,
            } => {
                let k = -g.item() / *count as f64;
                for &p in inputs {
                    let d = self.value(p).map(|x| {
                        if x > *clamp {
                            k * (x.ln() + 1.0)
                        } else {
                            k * clamp.ln()
                        }
                    });
                    self.accumulate(p, d);
                }
            }
            Op::Attention {
                h,
                a_src,
                a_dst,
                pattern,
                alpha,
                pre_act,
            } => {
                self.attention_backward(*h, *a_src, *a_dst, pattern, alpha, pre_act, g)?;
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &mut self,
        h: Var,
        a_src: Var,
        a_dst: Var,
        pattern: &SparseMatrix,
        alpha: &[f64],
        pre_act: &[f64],
        g: &DenseMatrix,
    ) -> Result<()> {
        let hv = self.value(h);
        let (n, d) = hv.shape();
        let src = self.value(a_src).data();
        let dst = self.value(a_dst).data();
        let mut dh = DenseMatrix::zeros(n, d);
        // d(loss)/d(source score p_i) and d(loss)/d(destination score q_j)
        let mut dp = vec![0.0; n];
        let mut dq = vec![0.0; n];
        let row_ptr = pattern.row_ptr();
        let col_idx = pattern.col_idx();
        for i in 0..n {
            let span = row_ptr[i]..row_ptr[i + 1];
            let gi = g.row(i);
            let dalpha: Vec<f64> = col_idx[span.clone()]
                .iter()
                .map(|&j| crate::tensor::dot(gi, hv.row(j)))
                .collect();
            let weighted: f64 = alpha[span.clone()].iter().zip(&dalpha).map(|(a, b)| a * b).sum();
            for (k, e) in span.enumerate() {
                let j = col_idx[e];
                let a = alpha[e];
                for (o, &x) in dh.row_mut(j).iter_mut().zip(gi) {
                    *o += a * x;
                }
                let de = a * (dalpha[k] - weighted);
                let slope = if pre_act[e] > 0.0 { 1.0 } else { LEAKY_RELU_SLOPE };
                let dz = de * slope;
                dp[i] += dz;
                dq[j] += dz;
            }
        }
        let mut dsrc = DenseMatrix::zeros(1, d);
        let mut ddst = DenseMatrix::zeros(1, d);
        for i in 0..n {
            let hi = hv.row(i);
            for c in 0..d {
                dsrc.data_mut()[c] += dp[i] * hi[c];
                ddst.data_mut()[c] += dq[i] * hi[c];
            }
            let row = dh.row_mut(i);
            for c in 0..d {
                row[c] += dp[i] * src[c] + dq[i] * dst[c];
            }
        }
        self.accumulate(h, dh);
        self.accumulate(a_src, dsrc);
        self.accumulate(a_dst, ddst);
        Ok(())
    }
}

/// Row-wise softmax Jacobian-vector product: `k * y ∘ (g − ⟨g, y⟩_row)`.
fn softmax_backward(y: &DenseMatrix, g: &DenseMatrix, k: f64) -> DenseMatrix {
    let mut d = DenseMatrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let gr = g.row(r);
        let inner = crate::tensor::dot(yr, gr);
        for ((o, &yi), &gi) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *o = k * yi * (gi - inner);
        }
    }
    d
}
