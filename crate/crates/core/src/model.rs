//! The full model: input embedding, stacked mixture blocks, the enhanced
//! feed-forward network, and the classification head.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::effn::{effn_forward, ActivationExpertKind, Effn, HardRouting};
use crate::error::{GnnMoeError, Result};
use crate::experts::PropagationKind;
use crate::graph::GraphOperators;
use crate::params::{Forward, Mode, ParamId, ParamStore};
use crate::rng::RngState;
use crate::routing::{moe_block_forward, routing_entropy, BlockSettings, MoEBlock, RouterKind, RoutingRecord};
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub blocks: usize,
    #[serde(with = "display_fromstr")]
    pub prop: PropagationKind,
    #[serde(with = "display_fromstr")]
    pub router: RouterKind,
    /// Softmax temperature of the soft router.
    pub temperature: f64,
    pub use_effn: bool,
    #[serde(with = "hard_routing_repr")]
    pub hard_routing: HardRouting,
    pub adaptive_residual: bool,
    /// Dropout rate of every expert T stage.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            blocks: 2,
            prop: PropagationKind::Gcn,
            router: RouterKind::Soft,
            temperature: 1.0,
            use_effn: true,
            hard_routing: HardRouting::Graph,
            adaptive_residual: true,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(GnnMoeError::InvalidArgument("hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GnnMoeError::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.temperature > 0.0) {
            return Err(GnnMoeError::InvalidArgument(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }

    fn block_settings(&self) -> BlockSettings {
        BlockSettings {
            prop: self.prop,
            router: self.router,
            temperature: self.temperature,
            adaptive_residual: self.adaptive_residual,
            dropout: self.dropout,
        }
    }
}

mod display_fromstr {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

mod hard_routing_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use crate::effn::{ActivationExpertKind, HardRouting};

    pub fn serialize<S: Serializer>(v: &HardRouting, s: S) -> Result<S::Ok, S::Error> {
        match v {
            HardRouting::Graph => s.serialize_str("graph"),
            HardRouting::Node => s.serialize_str("node"),
            HardRouting::Fixed(k) => s.collect_str(&format_args!("fixed-{k}")),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<HardRouting, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "graph" => Ok(HardRouting::Graph),
            "node" => Ok(HardRouting::Node),
            other => ActivationExpertKind::ALL
                .into_iter()
                .find(|k| other == format!("fixed-{k}"))
                .map(HardRouting::Fixed)
                .ok_or_else(|| de::Error::custom(format!("unknown hard routing {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnMoeModel {
    pub config: ModelConfig,
    pub in_dim: usize,
    pub classes: usize,
    pub params: ParamStore,
    pub w0: ParamId,
    pub blocks: Vec<MoEBlock>,
    pub effn: Option<Effn>,
    pub w6: ParamId,
}

/// Result of one forward pass, still attached to its tape.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub logits: Var,
    /// Routing weights, one `|V|×4` node per block.
    pub routing: Vec<Var>,
    pub hr_selection: Option<ActivationExpertKind>,
}

impl GnnMoeModel {
    pub fn new(config: ModelConfig, in_dim: usize, classes: usize, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 || classes == 0 {
            return Err(GnnMoeError::InvalidArgument(format!("{in_dim} input features, {classes} classes")));
        }
        let d = config.hidden;
        let mut params = ParamStore::new();
        let w0 = params.add_glorot("w0", in_dim, d, rng);
        let settings = config.block_settings();
        let blocks = (0..config.blocks)
            .map(|l| MoEBlock::new(&settings, d, &mut params, rng, &format!("block{l}")))
            .collect();
        let effn = config.use_effn.then(|| Effn::new(d, config.adaptive_residual, &mut params, rng));
        let w6 = params.add_glorot("w6", d, classes, rng);
        Ok(GnnMoeModel {
            config,
            in_dim,
            classes,
            params,
            w0,
            blocks,
            effn,
            w6,
        })
    }

    /// `X·W₀ → ReLU → blocks → EFFN → ·W₆`; the returned logits are
    /// pre-softmax.
    pub fn forward(&self, fwd: &mut Forward<'_>, ops: &GraphOperators, features: &DenseMatrix) -> Result<ModelOutput> {
        if features.cols() != self.in_dim {
            return Err(GnnMoeError::dim("model_forward", format!("{} features", self.in_dim), features.cols()));
        }
        if ops.normalized.rows() != features.rows() {
            return Err(GnnMoeError::dim("model_forward", format!("{} nodes", ops.normalized.rows()), features.rows()));
        }
        let x = fwd.tape.constant(features.clone());
        let w0 = fwd.var(self.w0);
        let h0 = fwd.tape.matmul(x, w0)?;
        let h0 = fwd.tape.relu(h0)?;
        let settings = self.config.block_settings();
        let mut h = h0;
        let mut routing = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, pi) = moe_block_forward(fwd, block, &settings, ops, h, h0)?;
            h = next;
            routing.push(pi);
        }
        let mut hr_selection = None;
        if let Some(effn) = &self.effn {
            let out = effn_forward(fwd, effn, self.config.hard_routing, h, h0)?;
            h = out.z;
            hr_selection = out.selection;
        }
        let w6 = fwd.var(self.w6);
        let logits = fwd.tape.matmul(h, w6)?;
        Ok(ModelOutput {
            logits,
            routing,
            hr_selection,
        })
    }

    /// Eval-mode logits and routing records.
    pub fn predict(&self, ops: &GraphOperators, features: &DenseMatrix) -> Result<Prediction> {
        // eval mode draws no random numbers
        let mut rng = RngState::new(0);
        let mut fwd = Forward::new(&self.params, &mut rng, Mode::Eval);
        let out = self.forward(&mut fwd, ops, features)?;
        Ok(Prediction {
            logits: fwd.tape.value(out.logits).clone(),
            routing: out
                .routing
                .iter()
                .enumerate()
                .map(|(block, &v)| RoutingRecord {
                    block,
                    weights: fwd.tape.value(v).clone(),
                })
                .collect(),
            hr_selection: out.hr_selection,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: DenseMatrix,
    pub routing: Vec<RoutingRecord>,
    pub hr_selection: Option<ActivationExpertKind>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub task: Var,
    /// `None` for a model without mixture blocks.
    pub route: Option<Var>,
}

/// `task + λ·route`, with the task loss a masked softmax cross-entropy and
/// the route loss the mean routing entropy.
pub fn total_loss(
    tape: &mut crate::autodiff::Tape,
    logits: Var,
    onehot: &DenseMatrix,
    mask: &[usize],
    routing: &[Var],
    lambda: f64,
) -> Result<LossParts> {
    if !(lambda >= 0.0) {
        return Err(GnnMoeError::InvalidArgument(format!("lambda {lambda} must be non-negative")));
    }
    let task = tape.softmax_cross_entropy(logits, onehot, mask)?;
    if routing.is_empty() {
        return Ok(LossParts {
            total: task,
            task,
            route: None,
        });
    }
    let route = routing_entropy(tape, routing)?;
    let total = if lambda == 0.0 {
        task
    } else {
        let weighted = tape.scale(route, lambda)?;
        tape.add(task, weighted)?
    };
    Ok(LossParts {
        total,
        task,
        route: Some(route),
    })
}

/// Fraction of `mask` rows whose argmax logit equals the label.
pub fn accuracy(logits: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(GnnMoeError::InvalidArgument("accuracy over an empty mask".into()));
    }
    if logits.rows() != labels.len() {
        return Err(GnnMoeError::dim("accuracy", labels.len(), logits.rows()));
    }
    let correct = mask.iter().filter(|&&i| logits.row_argmax(i) == labels[i]).count();
    Ok(correct as f64 / mask.len() as f64)
}

/// Eval-mode accuracy on `mask`.
pub fn evaluate(model: &GnnMoeModel, ops: &GraphOperators, g: &crate::graph::GraphDataset, mask: &[usize]) -> Result<f64> {
    let pred = model.predict(ops, &g.features)?;
    accuracy(&pred.logits, &g.labels, mask)
}
