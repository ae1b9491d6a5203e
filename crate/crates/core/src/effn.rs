//! Enhanced feed-forward network: a hard router picks one of three gated
//! activation experts, followed by an adaptive residual and layer norm.

use std::fmt;

use crate::autodiff::{ElementwiseKind, Operand, Tape, Var, LAYER_NORM_EPS};
use crate::error::Result;
use crate::params::{Forward, Mode, ParamId, ParamStore};
use crate::rng::RngState;
use crate::routing::adaptive_residual;
use crate::tensor::DenseMatrix;

pub const NUM_ACTIVATIONS: usize = 3;
pub const DEFAULT_GUMBEL_TEMPERATURE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationExpertKind {
    SwishGlu,
    GeGlu,
    ReGlu,
}

impl ActivationExpertKind {
    pub const ALL: [ActivationExpertKind; 3] =
        [ActivationExpertKind::SwishGlu, ActivationExpertKind::GeGlu, ActivationExpertKind::ReGlu];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    fn gate(self) -> ElementwiseKind {
        match self {
            ActivationExpertKind::SwishGlu => ElementwiseKind::Swish,
            ActivationExpertKind::GeGlu => ElementwiseKind::Gelu,
            ActivationExpertKind::ReGlu => ElementwiseKind::Relu,
        }
    }
}

impl fmt::Display for ActivationExpertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationExpertKind::SwishGlu => "SwishGLU",
            ActivationExpertKind::GeGlu => "GEGLU",
            ActivationExpertKind::ReGlu => "REGLU",
        })
    }
}

/// How the activation expert is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HardRouting {
    /// One expert for the whole graph from mean-pooled features.
    Graph,
    /// One expert per node.
    Node,
    /// Always the given expert; the router is not trained.
    Fixed(ActivationExpertKind),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Effn {
    pub w3: ParamId,
    pub w4: ParamId,
    pub w5: ParamId,
    /// `d′×3` hard-router projection.
    pub w_hr: ParamId,
    /// Raw scalar `b` with `β = sigmoid(b)`; `None` disables the residual.
    pub residual_raw: Option<ParamId>,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub gumbel_temperature: f64,
}

impl Effn {
    pub fn new(hidden: usize, adaptive_residual: bool, store: &mut ParamStore, rng: &mut RngState) -> Self {
        Effn {
            w3: store.add_glorot("effn.w3", hidden, hidden, rng),
            w4: store.add_glorot("effn.w4", hidden, hidden, rng),
            w5: store.add_glorot("effn.w5", hidden, hidden, rng),
            w_hr: store.add_glorot("effn.w_hr", hidden, NUM_ACTIVATIONS, rng),
            residual_raw: adaptive_residual.then(|| store.add("effn.residual", DenseMatrix::scalar(0.0), false)),
            ln_gain: store.add("effn.ln.gain", DenseMatrix::filled(1, hidden, 1.0), false),
            ln_bias: store.add("effn.ln.bias", DenseMatrix::zeros(1, hidden), false),
            gumbel_temperature: DEFAULT_GUMBEL_TEMPERATURE,
        }
    }
}

/// `(σ_j(h·W₃) ⊗ h·W₄)·W₅`
pub fn gated_activation(tape: &mut Tape, kind: ActivationExpertKind, h: Var, w3: Var, w4: Var, w5: Var) -> Result<Var> {
    let gate = tape.matmul(h, w3)?;
    let gate = tape.elementwise(kind.gate(), gate, Operand::None)?;
    let value = tape.matmul(h, w4)?;
    let z = tape.hadamard(gate, value)?;
    tape.matmul(z, w5)
}

/// Hard-router selection: `1×3` (graph level) or `|V|×3` (node level), with
/// one-hot forward values. Training samples Gumbel noise with the
/// straight-through backward; eval takes the argmax with lowest-index ties.
/// In [`Mode::Probe`] the selection is a constant.
pub fn route_hard(fwd: &mut Forward<'_>, effn: &Effn, h: Var, per_node: bool) -> Result<Var> {
    let pooled = if per_node { h } else { fwd.tape.mean_rows(h)? };
    let w_hr = fwd.var(effn.w_hr);
    let logits = fwd.tape.matmul(pooled, w_hr)?;
    let training = fwd.training();
    let s = fwd.tape.gumbel_softmax(logits, effn.gumbel_temperature, true, fwd.rng, training)?;
    Ok(if fwd.mode == Mode::Probe { fwd.tape.detach(s) } else { s })
}

/// Output of [`effn_forward`].
#[derive(Clone, Copy, Debug)]
pub struct EffnOutput {
    pub z: Var,
    /// Selected activation expert (graph-level and fixed routing only).
    pub selection: Option<ActivationExpertKind>,
}

pub fn effn_forward(fwd: &mut Forward<'_>, effn: &Effn, routing: HardRouting, h: Var, h0: Var) -> Result<EffnOutput> {
    let (w3, w4, w5) = (fwd.var(effn.w3), fwd.var(effn.w4), fwd.var(effn.w5));
    let (z, selection) = match routing {
        HardRouting::Fixed(kind) => (gated_activation(&mut fwd.tape, kind, h, w3, w4, w5)?, Some(kind)),
        HardRouting::Graph => {
            let s = route_hard(fwd, effn, h, false)?;
            let j = fwd.tape.value(s).row_argmax(0);
            let kind = ActivationExpertKind::from_index(j);
            // only the selected branch is materialized; its one-hot weight
            // carries the straight-through gradient
            let a = gated_activation(&mut fwd.tape, kind, h, w3, w4, w5)?;
            (fwd.tape.scale_by_entry(a, s, 0, j)?, Some(kind))
        }
        HardRouting::Node => {
            let s = route_hard(fwd, effn, h, true)?;
            let mut acc: Option<Var> = None;
            for kind in ActivationExpertKind::ALL {
                let a = gated_activation(&mut fwd.tape, kind, h, w3, w4, w5)?;
                let w = fwd.tape.scale_rows_by_column(a, s, kind.index())?;
                acc = Some(match acc {
                    None => w,
                    Some(prev) => fwd.tape.add(prev, w)?,
                });
            }
            (acc.expect("three activation experts"), None)
        }
    };
    let pre_norm = match effn.residual_raw {
        Some(raw) => {
            let raw = fwd.var(raw);
            let beta = fwd.tape.sigmoid(raw)?;
            adaptive_residual(&mut fwd.tape, h0, z, beta)?
        }
        None => z,
    };
    let (gain, bias) = (fwd.var(effn.ln_gain), fwd.var(effn.ln_bias));
    let z = fwd.tape.layer_norm(pre_norm, gain, bias, LAYER_NORM_EPS)?;
    Ok(EffnOutput { z, selection })
}
