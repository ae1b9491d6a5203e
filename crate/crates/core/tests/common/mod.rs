//! Helpers shared by integration test targets.
#![allow(dead_code)]

use gnnmoe::autodiff::relative_error;
use gnnmoe::graph::{generate_sbm, GraphDataset, GraphOperators, SbmParams};
use gnnmoe::model::{total_loss, GnnMoeModel, ModelConfig};
use gnnmoe::params::{Forward, Mode, ParamStore};
use gnnmoe::rng::RngState;
use rand::Rng;

const EPS: f64 = 1e-5;
const SAMPLES_PER_PARAM: usize = 5;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
const LAMBDA: f64 = 0.5;

fn tiny_graph() -> GraphDataset {
    generate_sbm(
        &SbmParams {
            nodes: 12,
            classes: 4,
            p_in: 0.4,
            p_out: 0.1,
            feature_dim: 5,
            noise: 1.0,
        },
        &mut RngState::new(11),
    )
    .unwrap()
}

fn loss_value(model: &GnnMoeModel, params: &ParamStore, ops: &GraphOperators, g: &GraphDataset) -> f64 {
    let mut rng = RngState::new(0);
    let mut fwd = Forward::new(params, &mut rng, Mode::Probe);
    let out = model.forward(&mut fwd, ops, &g.features).unwrap();
    let mask: Vec<usize> = (0..g.num_nodes()).collect();
    let loss = total_loss(&mut fwd.tape, out.logits, &g.one_hot_labels(), &mask, &out.routing, LAMBDA).unwrap();
    fwd.tape.value(loss.total).item()
}

/// Worst relative error over `SAMPLES_PER_PARAM` coordinates of every
/// parameter tensor.
pub fn worst_model_gradient_error(cfg: ModelConfig, seed: u64) -> f64 {
    let g = tiny_graph();
    let ops = GraphOperators::new(&g);
    let model = GnnMoeModel::new(cfg, g.num_features(), g.num_classes, &mut RngState::new(seed)).unwrap();
    let mut rng = RngState::new(0);
    let mut fwd = Forward::new(&model.params, &mut rng, Mode::Probe);
    let out = model.forward(&mut fwd, &ops, &g.features).unwrap();
    let mask: Vec<usize> = (0..g.num_nodes()).collect();
    let loss = total_loss(&mut fwd.tape, out.logits, &g.one_hot_labels(), &mask, &out.routing, LAMBDA).unwrap();
    fwd.tape.backward(loss.total).unwrap();
    let grads = fwd.grads();
    drop(fwd);

    let mut pick = RngState::new(seed ^ 0x5eed).stream();
    let mut worst: f64 = 0.0;
    for id in model.params.ids() {
        let len = model.params.get(id).len();
        for _ in 0..SAMPLES_PER_PARAM {
            let coord = pick.random_range(0..len);
            let mut params = model.params.clone();
            let x0 = params.get(id).data()[coord];
            params.get_mut(id).data_mut()[coord] = x0 + EPS;
            let plus = loss_value(&model, &params, &ops, &g);
            params.get_mut(id).data_mut()[coord] = x0 - EPS;
            let minus = loss_value(&model, &params, &ops, &g);
            let numeric = (plus - minus) / (2.0 * EPS);
            let err = relative_error(grads[id.index()].data()[coord], numeric);
            worst = worst.max(err);
        }
    }
    worst
}
