//! AdamW with decoupled weight decay.

use crate::error::{GnnMoeError, Result};
use crate::params::ParamStore;
use crate::tensor::DenseMatrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<DenseMatrix> = params.values().iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One AdamW step. Tensors flagged for decay shrink by `lr·wd·θ` before
    /// the bias-corrected moment update is applied.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[DenseMatrix], lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(GnnMoeError::dim("optimizer_step", params.len(), grads.len()));
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powf(self.step as f64);
        let bc2 = 1.0 - BETA2.powf(self.step as f64);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let decay = if params.decays(id) { lr * weight_decay } else { 0.0 };
            let theta = params.get_mut(id);
            if grads[k].shape() != theta.shape() {
                return Err(GnnMoeError::dim("optimizer_step", format!("{:?}", theta.shape()), format!("{:?}", grads[k].shape())));
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((t, &g), m), v) in theta.data_mut().iter_mut().zip(grads[k].data()).zip(m).zip(v) {
                *t -= decay * *t;
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *t -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", DenseMatrix::scalar(x), decay);
        s
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut s = scalar_store(1.25, true);
        let mut opt = OptimizerState::new(&s);
        for _ in 0..3 {
            opt.step(&mut s, &[DenseMatrix::scalar(0.0)], 0.1, 0.0).unwrap();
        }
        assert_eq!(s.values()[0].item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.0, false);
        let mut opt = OptimizerState::new(&s);
        opt.step(&mut s, &[DenseMatrix::scalar(1.0)], 0.1, 0.0).unwrap();
        // m̂ = v̂ = 1 at t = 1
        assert!((s.values()[0].item() + 0.1 / (1.0 + EPSILON)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = scalar_store(1.0, false);
        let mut opt = OptimizerState::new(&s);
        for _ in 0..200 {
            let g = s.values()[0].clone();
            opt.step(&mut s, &[g], 0.05, 0.0).unwrap();
        }
        let x = s.values()[0].item();
        assert!(0.5 * x * x < 1e-3, "{x}");
    }

    #[test]
    fn decay_only_touches_flagged_tensors() {
        let mut s = ParamStore::new();
        s.add("w", DenseMatrix::scalar(2.0), true);
        s.add("b", DenseMatrix::scalar(2.0), false);
        let mut opt = OptimizerState::new(&s);
        let zero = DenseMatrix::scalar(0.0);
        opt.step(&mut s, &[zero.clone(), zero], 0.1, 0.5).unwrap();
        assert!((s.values()[0].item() - 1.9).abs() < 1e-15);
        assert_eq!(s.values()[1].item(), 2.0);
    }

    #[test]
    fn gradient_count_mismatch_is_error() {
        let mut s = scalar_store(0.0, false);
        let mut opt = OptimizerState::new(&s);
        assert!(opt.step(&mut s, &[], 0.1, 0.0).is_err());
    }
}
