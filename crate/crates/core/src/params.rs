//! Parameter storage and the per-forward binding of parameters to a tape.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::rng::RngState;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns every trainable tensor of a model. Order of insertion is the order
/// used by the optimizer and by gradient vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<DenseMatrix>,
    names: Vec<String>,
    decay: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// `decay` marks tensors subject to weight decay.
    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix, decay: bool) -> ParamId {
        self.values.push(value);
        self.names.push(name.into());
        self.decay.push(decay);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform `rows × cols` weight matrix, decayed.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut RngState) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        self.add(name, uniform(rows, cols, limit, rng), true)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: DenseMatrix) {
        assert_eq!(value.shape(), self.values[id.0].shape(), "parameter {} changes shape", self.names[id.0]);
        self.values[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[DenseMatrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(DenseMatrix::len).sum()
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}

pub(crate) fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut RngState) -> DenseMatrix {
    let mut stream = rng.stream();
    let data = (0..rows * cols).map(|_| stream.random_range(-limit..=limit)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("length matches shape")
}

/// How a forward pass treats stochastic components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, Gumbel noise on the hard router.
    Train,
    /// No dropout, deterministic argmax hard routing.
    Eval,
    /// As `Eval`, but the hard-router selection is a constant so the whole
    /// forward is a smooth function of the parameters (for gradient checks).
    Probe,
}

impl Mode {
    pub fn training(self) -> bool {
        self == Mode::Train
    }
}

/// One forward pass: a fresh tape with every parameter bound to a leaf.
pub struct Forward<'r> {
    pub tape: Tape,
    vars: Vec<Var>,
    pub rng: &'r mut RngState,
    pub mode: Mode,
}

impl<'r> Forward<'r> {
    pub fn new(params: &ParamStore, rng: &'r mut RngState, mode: Mode) -> Self {
        let mut tape = Tape::new();
        let vars = params.values.iter().map(|v| tape.leaf(v.clone())).collect();
        Forward { tape, vars, rng, mode }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn training(&self) -> bool {
        self.mode.training()
    }

    /// Gradients of every parameter, in store order. Call after
    /// `tape.backward`.
    pub fn grads(&self) -> Vec<DenseMatrix> {
        self.vars.iter().map(|&v| self.tape.grad(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_within_limit() {
        let mut store = ParamStore::new();
        let id = store.add_glorot("w", 10, 6, &mut RngState::new(0));
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(store.get(id).data().iter().all(|x| x.abs() <= limit));
        assert!(store.decays(id));
        assert_eq!(store.lookup("w"), Some(id));
    }

    #[test]
    fn binding_exposes_grads_in_store_order() {
        let mut store = ParamStore::new();
        let a = store.add("a", DenseMatrix::filled(1, 2, 3.0), false);
        let b = store.add("b", DenseMatrix::filled(2, 1, 1.0), true);
        let mut rng = RngState::new(0);
        let mut f = Forward::new(&store, &mut rng, Mode::Eval);
        let y = f.tape.matmul(f.var(a), f.var(b)).unwrap();
        f.tape.backward(y).unwrap();
        let g = f.grads();
        assert_eq!(g[0].data(), &[1.0, 1.0]);
        assert_eq!(g[1].data(), &[3.0, 3.0]);
    }
}
