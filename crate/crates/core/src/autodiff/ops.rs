use std::sync::Arc;

use rand::Rng;

use super::{Op, Tape, Unary, Var};
use crate::error::{GnnMoeError, Result};
use crate::rng::{open_unit, RngState};
use crate::tensor::{argmax, DenseMatrix, SparseMatrix};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Hadamard,
    Scale,
    Relu,
    LeakyRelu,
    Sigmoid,
    Swish,
    Gelu,
    Log,
    Exp,
}

/// Second argument of [`Tape::elementwise`].
#[derive(Clone, Copy, Debug)]
pub enum Operand {
    None,
    Node(Var),
    Scalar(f64),
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

fn softmax_row(logits: &[f64], scale: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = ((l - max) * scale).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn one_hot_rows(soft: &DenseMatrix) -> DenseMatrix {
    let mut hard = DenseMatrix::zeros(soft.rows(), soft.cols());
    for r in 0..soft.rows() {
        hard.set(r, soft.row_argmax(r), 1.0);
    }
    hard
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(GnnMoeError::dim(op, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    /// Sparse-times-dense; the sparse operand is structural and never
    /// differentiated.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, d: Var) -> Result<Var> {
        let v = s.spmm(self.value(d))?;
        self.push("spmm", v, Op::SpMM(Arc::clone(s), d), &[d])
    }

    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Operand) -> Result<Var> {
        use ElementwiseKind as K;
        let binary = |tape: &mut Tape, name: &'static str| -> Result<Var> {
            match b {
                Operand::Node(b) => {
                    tape.same_shape(name, a, b)?;
                    Ok(b)
                }
                _ => Err(GnnMoeError::InvalidArgument(format!("{name} needs a node operand"))),
            }
        };
        match kind {
            K::Add | K::Sub if matches!(b, Operand::Scalar(_)) => {
                let Operand::Scalar(c) = b else { unreachable!() };
                let c = if kind == K::Sub { -c } else { c };
                self.affine(a, 1.0, c)
            }
            K::Add => {
                let b = binary(self, "add")?;
                let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
                self.push("add", v, Op::Add(a, b), &[a, b])
            }
            K::Sub => {
                let b = binary(self, "sub")?;
                let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
                self.push("sub", v, Op::Sub(a, b), &[a, b])
            }
            K::Hadamard => {
                let b = binary(self, "hadamard")?;
                let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
                self.push("hadamard", v, Op::Hadamard(a, b), &[a, b])
            }
            K::Scale => match b {
                Operand::Scalar(c) => self.affine(a, c, 0.0),
                _ => Err(GnnMoeError::InvalidArgument("scale needs a scalar operand".into())),
            },
            K::Relu => self.unary(a, Unary::Relu),
            K::LeakyRelu => self.unary(a, Unary::LeakyRelu),
            K::Sigmoid => self.unary(a, Unary::Sigmoid),
            K::Swish => self.unary(a, Unary::Swish),
            K::Gelu => self.unary(a, Unary::Gelu),
            K::Log => {
                if self.value(a).data().iter().any(|&x| x <= 0.0) {
                    return Err(GnnMoeError::domain("log", "non-positive entry"));
                }
                self.unary(a, Unary::Log)
            }
            K::Exp => self.unary(a, Unary::Exp),
        }
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let f: fn(f64) -> f64 = match kind {
            Unary::Relu => |x| x.max(0.0),
            Unary::LeakyRelu => |x| if x > 0.0 { x } else { LEAKY_RELU_SLOPE * x },
            Unary::Sigmoid => sigmoid,
            Unary::Swish => |x| x * sigmoid(x),
            Unary::Gelu => gelu,
            Unary::Log => f64::ln,
            Unary::Exp => f64::exp,
        };
        let v = self.value(a).map(f);
        self.push("elementwise", v, Op::Unary(a, kind), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Add, a, Operand::Node(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Sub, a, Operand::Node(b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Hadamard, a, Operand::Node(b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.affine(a, c, 0.0)
    }

    /// `mul * a + offset`
    pub fn affine(&mut self, a: Var, mul: f64, offset: f64) -> Result<Var> {
        let v = self.value(a).map(|x| mul * x + offset);
        self.push("affine", v, Op::Affine(a, mul), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    /// Softmax of `a / temperature` along each row, stabilized by subtracting
    /// the row max.
    pub fn rowwise_softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(GnnMoeError::domain("rowwise_softmax", format!("temperature {temperature}")));
        }
        let x = self.value(a);
        let mut y = DenseMatrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            softmax_row(x.row(r), 1.0 / temperature, y.row_mut(r));
        }
        self.push("rowwise_softmax", y, Op::RowSoftmax { x: a, temperature }, &[a])
    }

    /// Renormalized softmax over the `k` largest entries of each row; all
    /// other entries are exactly zero. Ties keep the lower index.
    pub fn topk_softmax(&mut self, a: Var, k: usize) -> Result<Var> {
        let x = self.value(a);
        if k == 0 || k > x.cols() {
            return Err(GnnMoeError::InvalidArgument(format!("top-k with k={k} over {} columns", x.cols())));
        }
        let mut y = DenseMatrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let top = top_k_indices(row, k);
            let sel: Vec<f64> = top.iter().map(|&i| row[i]).collect();
            let mut p = vec![0.0; k];
            softmax_row(&sel, 1.0, &mut p);
            for (&i, &pi) in top.iter().zip(&p) {
                y.set(r, i, pi);
            }
        }
        self.push("topk_softmax", y, Op::TopKSoftmax(a), &[a])
    }

    /// Per-row standardization followed by `gain ∘ x̂ + bias`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let cols = x.cols();
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if self.value(p).shape() != (1, cols) {
                return Err(GnnMoeError::dim("layer_norm", format!("{name} 1x{cols}"), format!("{:?}", self.value(p).shape())));
            }
        }
        let mut xhat = DenseMatrix::zeros(x.rows(), cols);
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut y = xhat.clone();
        for r in 0..y.rows() {
            for ((o, &gi), &bi) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        self.push(
            "layer_norm",
            y,
            Op::LayerNorm {
                x: a,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[a, gain, bias],
        )
    }

    /// Inverted dropout. Identity (no new node) in eval mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut RngState, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(GnnMoeError::domain("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.value(a).shape();
        let keep = 1.0 / (1.0 - rate);
        let mut stream = rng.stream();
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if stream.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = DenseMatrix::from_vec(r, c, mask)?;
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push("dropout", v, Op::Dropout(a, mask), &[a])
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(GnnMoeError::domain("mean_rows", "empty matrix"));
        }
        let mut m = DenseMatrix::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (o, &v) in m.data_mut().iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let n = x.rows() as f64;
        m.data_mut().iter_mut().for_each(|v| *v /= n);
        self.push("mean_rows", m, Op::MeanRows(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum_all", DenseMatrix::scalar(s), Op::SumAll(a), &[a])
    }

    /// Mean over `mask` rows of `−log softmax(logits)[label]`. Every masked
    /// row of `onehot` must be a valid one-hot vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, onehot: &DenseMatrix, mask: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        if x.shape() != onehot.shape() {
            return Err(GnnMoeError::dim(
                "softmax_cross_entropy",
                format!("{:?}", x.shape()),
                format!("{:?}", onehot.shape()),
            ));
        }
        if mask.is_empty() {
            return Err(GnnMoeError::domain("softmax_cross_entropy", "empty mask"));
        }
        let mut probs = DenseMatrix::zeros(x.rows(), x.cols());
        let mut targets = Vec::with_capacity(mask.len());
        let mut loss = 0.0;
        for &r in mask {
            if r >= x.rows() {
                return Err(GnnMoeError::InvalidArgument(format!("mask index {r} out of range")));
            }
            let y = onehot.row(r);
            let ones = y.iter().filter(|&&v| v == 1.0).count();
            let zeros = y.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != y.len() {
                return Err(GnnMoeError::InvalidArgument(format!("row {r} is not one-hot")));
            }
            let class = argmax(y);
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[class];
            softmax_row(row, 1.0, probs.row_mut(r));
            targets.push((r, class));
        }
        loss /= mask.len() as f64;
        self.push(
            "softmax_cross_entropy",
            DenseMatrix::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
            },
            &[logits],
        )
    }

    /// Gumbel-softmax sampling. Training mode perturbs logits with Gumbel(0,1)
    /// noise; with `hard` the forward value is the one-hot argmax of the
    /// relaxed sample. Eval mode is noise-free and always one-hot. Backward is
    /// always the soft relaxation (straight-through).
    pub fn gumbel_softmax(
        &mut self,
        logits: Var,
        temperature: f64,
        hard: bool,
        rng: &mut RngState,
        training: bool,
    ) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(GnnMoeError::domain("gumbel_softmax", format!("temperature {temperature}")));
        }
        let x = self.value(logits);
        let mut perturbed = x.clone();
        if training {
            let mut stream = rng.stream();
            for v in perturbed.data_mut() {
                let u = open_unit(&mut stream);
                *v += -(-u.ln()).ln();
            }
        }
        let mut soft = DenseMatrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            softmax_row(perturbed.row(r), 1.0 / temperature, soft.row_mut(r));
        }
        let value = if hard || !training {
            // argmax of the perturbed logits; identical to argmax of `soft`
            // but immune to exp underflow ties.
            let mut h = DenseMatrix::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                h.set(r, perturbed.row_argmax(r), 1.0);
            }
            h
        } else {
            soft.clone()
        };
        debug_assert!(!hard || one_hot_rows(&value) == value);
        self.push(
            "gumbel_softmax",
            value,
            Op::GumbelSoftmax {
                logits,
                soft,
                temperature,
            },
            &[logits],
        )
    }

    /// `out[i, :] = h[i, :] * weights[i, col]`
    pub fn scale_rows_by_column(&mut self, h: Var, weights: Var, col: usize) -> Result<Var> {
        let (hv, wv) = (self.value(h), self.value(weights));
        if hv.rows() != wv.rows() || col >= wv.cols() {
            return Err(GnnMoeError::dim(
                "scale_rows_by_column",
                format!("{} rows and column < {}", hv.rows(), wv.cols()),
                format!("{} rows, column {col}", wv.rows()),
            ));
        }
        let mut out = hv.clone();
        for r in 0..out.rows() {
            let w = wv.get(r, col);
            out.row_mut(r).iter_mut().for_each(|x| *x *= w);
        }
        self.push("scale_rows_by_column", out, Op::ScaleRowsByColumn { h, weights, col }, &[h, weights])
    }

    /// `out = h * s[row, col]`
    pub fn scale_by_entry(&mut self, h: Var, s: Var, row: usize, col: usize) -> Result<Var> {
        let sv = self.value(s);
        if row >= sv.rows() || col >= sv.cols() {
            return Err(GnnMoeError::dim("scale_by_entry", format!("{:?}", sv.shape()), format!("({row}, {col})")));
        }
        let c = sv.get(row, col);
        let out = self.value(h).map(|x| x * c);
        self.push("scale_by_entry", out, Op::ScaleByEntry { h, s, row, col }, &[h, s])
    }

    /// Mean Shannon entropy (natural log) of the rows of every input, with
    /// entries clamped below at `clamp` inside the log.
    pub fn mean_row_entropy(&mut self, inputs: &[Var], clamp: f64) -> Result<Var> {
        if inputs.is_empty() {
            return Err(GnnMoeError::domain("mean_row_entropy", "no inputs"));
        }
        let mut total = 0.0;
        let mut count = 0;
        for &p in inputs {
            let v = self.value(p);
            count += v.rows();
            total -= v.data().iter().map(|&x| x * x.max(clamp).ln()).sum::<f64>();
        }
        if count == 0 {
            return Err(GnnMoeError::domain("mean_row_entropy", "inputs have no rows"));
        }
        self.push(
            "mean_row_entropy",
            DenseMatrix::scalar(total / count as f64),
            Op::MeanEntropy {
                inputs: inputs.to_vec(),
                clamp,
                count,
            },
            inputs,
        )
    }

    /// Single-head additive attention over the stored pattern of `pattern`
    /// (which should contain each node's neighbors and itself):
    /// `e_ij = leaky_relu(a_src·h_i + a_dst·h_j)`, `α = softmax_j(e)`,
    /// `out_i = Σ_j α_ij h_j`.
    pub fn attention_aggregate(&mut self, pattern: &Arc<SparseMatrix>, h: Var, a_src: Var, a_dst: Var) -> Result<Var> {
        let hv = self.value(h);
        let (n, d) = hv.shape();
        if pattern.rows() != n || pattern.cols() != n {
            return Err(GnnMoeError::dim("attention_aggregate", format!("{n}x{n} pattern"), format!("{}x{}", pattern.rows(), pattern.cols())));
        }
        for p in [a_src, a_dst] {
            if self.value(p).shape() != (1, d) {
                return Err(GnnMoeError::dim("attention_aggregate", format!("1x{d} attention vector"), format!("{:?}", self.value(p).shape())));
            }
        }
        let src = self.value(a_src).data();
        let dst = self.value(a_dst).data();
        let p: Vec<f64> = (0..n).map(|i| crate::tensor::dot(hv.row(i), src)).collect();
        let q: Vec<f64> = (0..n).map(|j| crate::tensor::dot(hv.row(j), dst)).collect();
        let mut alpha = vec![0.0; pattern.nnz()];
        let mut pre_act = vec![0.0; pattern.nnz()];
        let mut out = DenseMatrix::zeros(n, d);
        let row_ptr = pattern.row_ptr();
        let col_idx = pattern.col_idx();
        for i in 0..n {
            let span = row_ptr[i]..row_ptr[i + 1];
            if span.is_empty() {
                continue;
            }
            let mut scores = Vec::with_capacity(span.len());
            for e in span.clone() {
                let z = p[i] + q[col_idx[e]];
                pre_act[e] = z;
                scores.push(if z > 0.0 { z } else { LEAKY_RELU_SLOPE * z });
            }
            softmax_row(&scores, 1.0, &mut alpha[span.clone()]);
            for e in span {
                let a = alpha[e];
                let hj = hv.row(col_idx[e]);
                for (o, &x) in out.row_mut(i).iter_mut().zip(hj) {
                    *o += a * x;
                }
            }
        }
        self.push(
            "attention_aggregate",
            out,
            Op::Attention {
                h,
                a_src,
                a_dst,
                pattern: Arc::clone(pattern),
                alpha,
                pre_act,
            },
            &[h, a_src, a_dst],
        )
    }
}

/// Indices of the `k` largest values, ties broken by lower index, returned
/// in descending order of value.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
