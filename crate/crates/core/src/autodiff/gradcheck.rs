//! Central finite-difference checks against [`Tape::backward`].

use rand::Rng;

use super::{Tape, Var};
use crate::error::{GnnMoeError, Result};
use crate::rng::RngState;
use crate::tensor::DenseMatrix;

/// `|analytic − numeric| / max(1e-8, |numeric|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

fn evaluate<F>(inputs: &[DenseMatrix], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(GnnMoeError::dim("grad_check", "scalar output", format!("{:?}", v.shape())));
    }
    Ok(v.item())
}

fn analytic<F>(inputs: &[DenseMatrix], f: &F) -> Result<Vec<DenseMatrix>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars.iter().map(|&v| tape.grad(v)).collect())
}

fn central_difference<F>(inputs: &[DenseMatrix], which: usize, coord: usize, eps: f64, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut perturbed = inputs.to_vec();
    let x0 = perturbed[which].data()[coord];
    perturbed[which].data_mut()[coord] = x0 + eps;
    let plus = evaluate(&perturbed, f)?;
    perturbed[which].data_mut()[coord] = x0 - eps;
    let minus = evaluate(&perturbed, f)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Maximum relative error over every coordinate of every input.
pub fn grad_check<F>(inputs: &[DenseMatrix], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let grads = analytic(inputs, &f)?;
    let mut worst: f64 = 0.0;
    for (which, g) in grads.iter().enumerate() {
        for coord in 0..g.len() {
            let numeric = central_difference(inputs, which, coord, eps, &f)?;
            worst = worst.max(relative_error(g.data()[coord], numeric));
        }
    }
    Ok(worst)
}

/// Like [`grad_check`] but only over `samples` random coordinates per input.
pub fn grad_check_sampled<F>(inputs: &[DenseMatrix], eps: f64, samples: usize, rng: &mut RngState, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let grads = analytic(inputs, &f)?;
    let mut stream = rng.stream();
    let mut worst: f64 = 0.0;
    for (which, g) in grads.iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        for _ in 0..samples {
            let coord = stream.random_range(0..g.len());
            let numeric = central_difference(inputs, which, coord, eps, &f)?;
            worst = worst.max(relative_error(g.data()[coord], numeric));
        }
    }
    Ok(worst)
}
