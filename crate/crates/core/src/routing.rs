//! Soft routing over the message-passing experts, the mixture block with its
//! adaptive initial residual, and the routing-entropy regularizer.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var, LAYER_NORM_EPS};
use crate::error::{GnnMoeError, Result};
use crate::experts::{apply_expert, ExpertKind, ExpertParams, PropagationKind};
use crate::graph::GraphOperators;
use crate::params::{Forward, ParamId, ParamStore};
use crate::rng::RngState;
use crate::tensor::DenseMatrix;

pub const NUM_EXPERTS: usize = 4;
/// Lower clamp on routing weights inside the entropy log.
pub const ENTROPY_CLAMP: f64 = 1e-12;

/// How routing weights over the four experts are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RouterKind {
    /// `softmax(relu(H·W₁)·W₂ / τ)`
    Soft,
    /// Constant `1/4` per expert.
    Mean,
    /// Soft-router logits restricted to the `k` largest, renormalized.
    TopK(usize),
    /// `softmax(H·K)` with one learnable key column per expert.
    DotAttention,
    /// Constant one-hot on a single expert; the others are not evaluated.
    Forced(ExpertKind),
}

impl RouterKind {
    pub fn label(self) -> String {
        match self {
            RouterKind::Soft => "soft".into(),
            RouterKind::Mean => "mean".into(),
            RouterKind::TopK(k) => format!("top{k}"),
            RouterKind::DotAttention => "dot-att".into(),
            RouterKind::Forced(e) => format!("only-{e}"),
        }
    }
}

impl fmt::Display for RouterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for RouterKind {
    type Err = GnnMoeError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "soft" => return Ok(RouterKind::Soft),
            "mean" => return Ok(RouterKind::Mean),
            "dot-att" | "dot-attention" => return Ok(RouterKind::DotAttention),
            _ => {}
        }
        if let Some(k) = lower.strip_prefix("top") {
            if let Ok(k) = k.parse::<usize>() {
                if (1..=NUM_EXPERTS).contains(&k) {
                    return Ok(RouterKind::TopK(k));
                }
            }
        }
        if let Some(e) = lower.strip_prefix("only-") {
            return Ok(RouterKind::Forced(e.parse()?));
        }
        Err(GnnMoeError::InvalidArgument(format!("unknown router {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RouterParams {
    /// `W₁` (d′×d_r) and `W₂` (d_r×4).
    Mlp { w1: ParamId, w2: ParamId },
    /// Key matrix (d′×4).
    Keys(ParamId),
    Fixed,
}

impl RouterParams {
    pub fn new(kind: RouterKind, hidden: usize, store: &mut ParamStore, rng: &mut RngState, prefix: &str) -> Self {
        match kind {
            RouterKind::Soft | RouterKind::TopK(_) => RouterParams::Mlp {
                w1: store.add_glorot(format!("{prefix}.router.w1"), hidden, hidden, rng),
                w2: store.add_glorot(format!("{prefix}.router.w2"), hidden, NUM_EXPERTS, rng),
            },
            RouterKind::DotAttention => RouterParams::Keys(store.add_glorot(format!("{prefix}.router.keys"), hidden, NUM_EXPERTS, rng)),
            RouterKind::Mean | RouterKind::Forced(_) => RouterParams::Fixed,
        }
    }
}

/// `softmax(relu(h·W₁)·W₂ / τ)`
pub fn route_soft(tape: &mut Tape, h: Var, w1: Var, w2: Var, temperature: f64) -> Result<Var> {
    let z = tape.matmul(h, w1)?;
    let z = tape.relu(z)?;
    let logits = tape.matmul(z, w2)?;
    tape.rowwise_softmax(logits, temperature)
}

/// Routing weights `|V|×4` for the given router.
pub fn route(fwd: &mut Forward<'_>, kind: RouterKind, params: &RouterParams, h: Var, temperature: f64) -> Result<Var> {
    let n = fwd.tape.value(h).rows();
    match (kind, params) {
        (RouterKind::Soft, RouterParams::Mlp { w1, w2 }) => {
            let (w1, w2) = (fwd.var(*w1), fwd.var(*w2));
            route_soft(&mut fwd.tape, h, w1, w2, temperature)
        }
        (RouterKind::TopK(k), RouterParams::Mlp { w1, w2 }) => {
            let (w1, w2) = (fwd.var(*w1), fwd.var(*w2));
            let z = fwd.tape.matmul(h, w1)?;
            let z = fwd.tape.relu(z)?;
            let logits = fwd.tape.matmul(z, w2)?;
            fwd.tape.topk_softmax(logits, k)
        }
        (RouterKind::DotAttention, RouterParams::Keys(keys)) => {
            let keys = fwd.var(*keys);
            let scores = fwd.tape.matmul(h, keys)?;
            fwd.tape.rowwise_softmax(scores, temperature)
        }
        (RouterKind::Mean, _) => Ok(fwd.tape.constant(DenseMatrix::filled(n, NUM_EXPERTS, 1.0 / NUM_EXPERTS as f64))),
        (RouterKind::Forced(e), _) => {
            let mut pi = DenseMatrix::zeros(n, NUM_EXPERTS);
            for r in 0..n {
                pi.set(r, e.index(), 1.0);
            }
            Ok(fwd.tape.constant(pi))
        }
        (kind, params) => Err(GnnMoeError::InvalidArgument(format!("router {kind} cannot use parameters {params:?}"))),
    }
}

/// `α·h0 + (1−α)·h` for a 1×1 `alpha`.
pub fn adaptive_residual(tape: &mut Tape, h0: Var, h: Var, alpha: Var) -> Result<Var> {
    let keep = tape.scale_by_entry(h0, alpha, 0, 0)?;
    let one_minus = tape.affine(alpha, -1.0, 1.0)?;
    let mixed = tape.scale_by_entry(h, one_minus, 0, 0)?;
    tape.add(keep, mixed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoEBlock {
    pub router: RouterParams,
    /// In [`ExpertKind::ALL`] order.
    pub experts: Vec<ExpertParams>,
    /// Raw scalar `a` with `α = sigmoid(a)`; `None` disables the residual.
    pub residual_raw: Option<ParamId>,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

/// Settings shared by every block of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSettings {
    pub prop: PropagationKind,
    pub router: RouterKind,
    pub temperature: f64,
    pub adaptive_residual: bool,
    pub dropout: f64,
}

impl MoEBlock {
    pub fn new(settings: &BlockSettings, hidden: usize, store: &mut ParamStore, rng: &mut RngState, prefix: &str) -> Self {
        let router = RouterParams::new(settings.router, hidden, store, rng, prefix);
        let experts = ExpertKind::ALL
            .iter()
            .map(|&k| ExpertParams::new(k, settings.prop, hidden, store, rng, prefix))
            .collect();
        let residual_raw = settings
            .adaptive_residual
            .then(|| store.add(format!("{prefix}.residual"), DenseMatrix::scalar(0.0), false));
        let ln_gain = store.add(format!("{prefix}.ln.gain"), DenseMatrix::filled(1, hidden, 1.0), false);
        let ln_bias = store.add(format!("{prefix}.ln.bias"), DenseMatrix::zeros(1, hidden), false);
        MoEBlock {
            router,
            experts,
            residual_raw,
            ln_gain,
            ln_bias,
        }
    }
}

/// One block: route, mix expert outputs row-wise by the routing weights,
/// blend with the initial embedding, layer-normalize. Returns the new
/// representation and the routing weights.
pub fn moe_block_forward(
    fwd: &mut Forward<'_>,
    block: &MoEBlock,
    settings: &BlockSettings,
    ops: &GraphOperators,
    h: Var,
    h0: Var,
) -> Result<(Var, Var)> {
    let pi = route(fwd, settings.router, &block.router, h, settings.temperature)?;
    let mut mixture: Option<Var> = None;
    for (e, params) in block.experts.iter().enumerate() {
        if let RouterKind::Forced(only) = settings.router {
            if only.index() != e {
                continue;
            }
        }
        let out = apply_expert(fwd, settings.prop, ops, params, h, settings.dropout)?;
        let weighted = fwd.tape.scale_rows_by_column(out, pi, e)?;
        mixture = Some(match mixture {
            None => weighted,
            Some(acc) => fwd.tape.add(acc, weighted)?,
        });
    }
    let mixture = mixture.expect("at least one expert evaluated");
    let pre_norm = match block.residual_raw {
        Some(raw) => {
            let raw = fwd.var(raw);
            let alpha = fwd.tape.sigmoid(raw)?;
            adaptive_residual(&mut fwd.tape, h0, mixture, alpha)?
        }
        None => mixture,
    };
    let (gain, bias) = (fwd.var(block.ln_gain), fwd.var(block.ln_bias));
    let out = fwd.tape.layer_norm(pre_norm, gain, bias, LAYER_NORM_EPS)?;
    Ok((out, pi))
}

/// Mean Shannon entropy of routing rows over all nodes and blocks.
pub fn routing_entropy(tape: &mut Tape, records: &[Var]) -> Result<Var> {
    if records.is_empty() {
        return Err(GnnMoeError::InvalidArgument("routing entropy over zero blocks".into()));
    }
    tape.mean_row_entropy(records, ENTROPY_CLAMP)
}

/// Routing weights of one block, detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingRecord {
    pub block: usize,
    pub weights: DenseMatrix,
}

impl RoutingRecord {
    /// Column means (mean weight per expert).
    pub fn mean_weights(&self) -> [f64; NUM_EXPERTS] {
        let mut m = [0.0; NUM_EXPERTS];
        let n = self.weights.rows().max(1) as f64;
        for r in 0..self.weights.rows() {
            for (acc, &w) in m.iter_mut().zip(self.weights.row(r)) {
                *acc += w;
            }
        }
        m.map(|s| s / n)
    }

    /// Mean row entropy.
    pub fn entropy(&self) -> f64 {
        let n = self.weights.rows().max(1) as f64;
        let plogp: f64 = self.weights.data().iter().map(|&p| p * p.max(ENTROPY_CLAMP).ln()).sum();
        // one-hot rows give -0.0
        0.0 - plogp / n
    }

    /// Largest deviation of a row sum from 1, and whether any entry is negative.
    pub fn check(&self) -> (f64, bool) {
        let mut worst: f64 = 0.0;
        for r in 0..self.weights.rows() {
            worst = worst.max((self.weights.row(r).iter().sum::<f64>() - 1.0).abs());
        }
        (worst, self.weights.data().iter().any(|&p| p < 0.0))
    }
}
