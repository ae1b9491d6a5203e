//! Decoupled propagation (P) and transformation (T) stages and the four
//! two-stage message-passing experts built from them.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{GnnMoeError, Result};
use crate::graph::GraphOperators;
use crate::params::{uniform, Forward, ParamId, ParamStore};
use crate::rng::RngState;
use crate::tensor::{DenseMatrix, SparseMatrix};

/// Initialization range of attention vectors.
pub const ATTENTION_INIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PropagationKind {
    Gcn,
    Sage,
    Gat,
}

impl PropagationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PropagationKind::Gcn => "gcn",
            PropagationKind::Sage => "sage",
            PropagationKind::Gat => "gat",
        }
    }
}

impl fmt::Display for PropagationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PropagationKind {
    type Err = GnnMoeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(PropagationKind::Gcn),
            "sage" => Ok(PropagationKind::Sage),
            "gat" => Ok(PropagationKind::Gat),
            other => Err(GnnMoeError::InvalidArgument(format!("unknown propagation kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExpertKind {
    PP,
    PT,
    TP,
    TT,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    P,
    T,
}

impl ExpertKind {
    /// Routing-weight column order.
    pub const ALL: [ExpertKind; 4] = [ExpertKind::PP, ExpertKind::PT, ExpertKind::TP, ExpertKind::TT];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExpertKind::PP => "PP",
            ExpertKind::PT => "PT",
            ExpertKind::TP => "TP",
            ExpertKind::TT => "TT",
        }
    }

    fn stages(self) -> [Stage; 2] {
        match self {
            ExpertKind::PP => [Stage::P, Stage::P],
            ExpertKind::PT => [Stage::P, Stage::T],
            ExpertKind::TP => [Stage::T, Stage::P],
            ExpertKind::TT => [Stage::T, Stage::T],
        }
    }
}

impl fmt::Display for ExpertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExpertKind {
    type Err = GnnMoeError;

    fn from_str(s: &str) -> Result<Self> {
        ExpertKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| GnnMoeError::InvalidArgument(format!("unknown expert {s:?}")))
    }
}

/// Parameters of one expert: a `d′×d′` weight per T stage and, under
/// attention propagation, an `(a_src, a_dst)` pair per P stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertParams {
    pub kind: ExpertKind,
    pub weights: Vec<ParamId>,
    pub attention: Vec<(ParamId, ParamId)>,
}

impl ExpertParams {
    pub fn new(
        kind: ExpertKind,
        prop: PropagationKind,
        hidden: usize,
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
    ) -> Self {
        let mut weights = Vec::new();
        let mut attention = Vec::new();
        for (s, stage) in kind.stages().into_iter().enumerate() {
            match stage {
                Stage::T => weights.push(store.add_glorot(format!("{prefix}.{kind}.w{s}"), hidden, hidden, rng)),
                Stage::P if prop == PropagationKind::Gat => {
                    let src = uniform(1, hidden, ATTENTION_INIT, rng);
                    let dst = uniform(1, hidden, ATTENTION_INIT, rng);
                    attention.push((
                        store.add(format!("{prefix}.{kind}.a_src{s}"), src, false),
                        store.add(format!("{prefix}.{kind}.a_dst{s}"), dst, false),
                    ));
                }
                Stage::P => {}
            }
        }
        ExpertParams { kind, weights, attention }
    }
}

pub fn propagate_gcn(tape: &mut Tape, a_hat: &Arc<SparseMatrix>, h: Var) -> Result<Var> {
    tape.spmm(a_hat, h)
}

/// Neighbor mean through the row-normalized adjacency; isolated nodes get a
/// zero row.
pub fn propagate_sage(tape: &mut Tape, mean: &Arc<SparseMatrix>, h: Var) -> Result<Var> {
    tape.spmm(mean, h)
}

pub fn propagate_gat(tape: &mut Tape, pattern: &Arc<SparseMatrix>, h: Var, a_src: Var, a_dst: Var) -> Result<Var> {
    tape.attention_aggregate(pattern, h, a_src, a_dst)
}

/// `dropout(relu(h·W))`
pub fn transform(tape: &mut Tape, h: Var, w: Var, dropout: f64, rng: &mut RngState, training: bool) -> Result<Var> {
    let z = tape.matmul(h, w)?;
    let z = tape.relu(z)?;
    tape.dropout(z, dropout, rng, training)
}

/// Applies the two stages of `params.kind` in order.
pub fn apply_expert(
    fwd: &mut Forward<'_>,
    prop: PropagationKind,
    ops: &GraphOperators,
    params: &ExpertParams,
    h: Var,
    dropout: f64,
) -> Result<Var> {
    let mut x = h;
    let (mut t_idx, mut p_idx) = (0, 0);
    for stage in params.kind.stages() {
        x = match stage {
            Stage::T => {
                let w = fwd.var(params.weights[t_idx]);
                t_idx += 1;
                let training = fwd.training();
                transform(&mut fwd.tape, x, w, dropout, fwd.rng, training)?
            }
            Stage::P => match prop {
                PropagationKind::Gcn => propagate_gcn(&mut fwd.tape, &ops.normalized, x)?,
                PropagationKind::Sage => propagate_sage(&mut fwd.tape, &ops.mean, x)?,
                PropagationKind::Gat => {
                    let (src, dst) = params.attention[p_idx];
                    p_idx += 1;
                    let (src, dst) = (fwd.var(src), fwd.var(dst));
                    propagate_gat(&mut fwd.tape, &ops.attention, x, src, dst)?
                }
            },
        };
    }
    Ok(x)
}

/// Dense reference for attention propagation: materializes the full
/// attention matrix over `A + I`.
pub fn dense_attention_reference(adjacency: &DenseMatrix, h: &DenseMatrix, a_src: &[f64], a_dst: &[f64]) -> DenseMatrix {
    let n = h.rows();
    let mut alpha = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let mut scores = Vec::new();
        for j in 0..n {
            if i == j || adjacency.get(i, j) != 0.0 {
                let z = crate::tensor::dot(h.row(i), a_src) + crate::tensor::dot(h.row(j), a_dst);
                scores.push((j, if z > 0.0 { z } else { crate::autodiff::LEAKY_RELU_SLOPE * z }));
            }
        }
        let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = scores.iter().map(|s| (s.1 - max).exp()).sum();
        for (j, s) in scores {
            alpha.set(i, j, (s - max).exp() / total);
        }
    }
    alpha.matmul(h).expect("square attention matrix")
}
