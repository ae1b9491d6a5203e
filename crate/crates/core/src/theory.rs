//! Numerical checks of entropy-regularized routing as a KL-trust-region
//! mirror-descent step on the probability simplex.
//!
//! For a base distribution `πᵗ`, gains `u`, step `η` and entropy weight `λ`
//! with `ηλ < 1`, the minimizer of
//! `J(π) = −⟨u, π⟩ − λ Σ π log π + (1/η) Σ π log(π/πᵗ)`
//! is `π ∝ (πᵗ)^{1/(1−ηλ)} · exp(η u/(1−ηλ))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{top_k_indices, Tape};
use crate::error::{GnnMoeError, Result};
use crate::rng::RngState;
use crate::tensor::{argmax, DenseMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingInstance {
    /// `πᵗ`, strictly positive, sums to 1.
    pub base: Vec<f64>,
    /// `u`
    pub gains: Vec<f64>,
    /// `η > 0`
    pub step: f64,
    /// `λ ≥ 0`
    pub coeff: f64,
}

impl RoutingInstance {
    pub fn validate(&self) -> Result<()> {
        let m = self.base.len();
        if m < 2 || self.gains.len() != m {
            return Err(GnnMoeError::dim("RoutingInstance", format!("m ≥ 2 and {m} gains"), self.gains.len()));
        }
        if self.base.iter().any(|&p| !(p > 0.0)) || (self.base.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(GnnMoeError::domain("RoutingInstance", "base must be strictly positive and sum to 1"));
        }
        if !(self.step > 0.0) || !(self.coeff >= 0.0) || self.gains.iter().any(|u| !u.is_finite()) {
            return Err(GnnMoeError::domain("RoutingInstance", "need η > 0, λ ≥ 0 and finite gains"));
        }
        Ok(())
    }

    /// `1 − ηλ`
    pub fn damping(&self) -> f64 {
        1.0 - self.step * self.coeff
    }

    /// `(1 − ηλ)/η`
    pub fn temperature(&self) -> f64 {
        self.damping() / self.step
    }
}

/// `0 · log 0 = 0`
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&x| xlogy(x, x)).sum::<f64>()
}

/// `J(π)`; `+∞` when `π` puts mass where `πᵗ` has none.
pub fn surrogate_value(pi: &[f64], inst: &RoutingInstance) -> f64 {
    let mut j = 0.0;
    for ((&p, &b), &u) in pi.iter().zip(&inst.base).zip(&inst.gains) {
        if p > 0.0 && b <= 0.0 {
            return f64::INFINITY;
        }
        j += -u * p - inst.coeff * xlogy(p, p) + (xlogy(p, p) - xlogy(p, b)) / inst.step;
    }
    j
}

/// Closed-form minimizer of `J`.
pub fn mirror_descent_update(inst: &RoutingInstance) -> Result<Vec<f64>> {
    inst.validate()?;
    let damping = inst.damping();
    if !(damping > 0.0) {
        return Err(GnnMoeError::domain(
            "mirror_descent_update",
            format!("ηλ = {} must be below 1", inst.step * inst.coeff),
        ));
    }
    // log of (πᵗ)^{1/(1−ηλ)} · exp(ηu/(1−ηλ))
    let logs: Vec<f64> = inst
        .base
        .iter()
        .zip(&inst.gains)
        .map(|(&b, &u)| b.ln() / damping + inst.step * u / damping)
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// The update written as a tempered softmax, evaluated with the autodiff
/// softmax: `softmax((log πᵗ + η·u)/(1 − ηλ))`.
pub fn tempered_softmax(inst: &RoutingInstance) -> Result<Vec<f64>> {
    inst.validate()?;
    let logits: Vec<f64> = inst.base.iter().zip(&inst.gains).map(|(&b, &u)| b.ln() + inst.step * u).collect();
    let mut tape = Tape::new();
    let x = tape.constant(DenseMatrix::from_vec(1, logits.len(), logits)?);
    let y = tape.rowwise_softmax(x, inst.damping())?;
    Ok(tape.value(y).data().to_vec())
}

/// Points of the simplex in `m` dimensions whose coordinates are multiples
/// of `1/resolution`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimplexGrid {
    pub m: usize,
    pub resolution: usize,
}

impl SimplexGrid {
    /// Calls `f` on every grid point.
    pub fn for_each(&self, mut f: impl FnMut(&[f64])) {
        let mut counts = vec![0usize; self.m];
        let mut point = vec![0.0; self.m];
        self.recurse(0, self.resolution, &mut counts, &mut point, &mut f);
    }

    fn recurse(&self, dim: usize, left: usize, counts: &mut [usize], point: &mut [f64], f: &mut impl FnMut(&[f64])) {
        if dim + 1 == self.m {
            counts[dim] = left;
            for (p, &c) in point.iter_mut().zip(counts.iter()) {
                *p = c as f64 / self.resolution as f64;
            }
            f(point);
            return;
        }
        for c in 0..=left {
            counts[dim] = c;
            self.recurse(dim + 1, left - c, counts, point, f);
        }
    }

    /// Number of grid points, `C(resolution + m − 1, m − 1)`.
    pub fn len(&self) -> usize {
        let (n, k) = (self.resolution + self.m - 1, self.m - 1);
        (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }
}

/// Refinement stops once the transfer step falls below this.
pub const REFINE_TOLERANCE: f64 = 1e-10;

/// Independent minimizer of `J`: best grid point, then pairwise
/// mass-transfer descent with step halving.
pub fn brute_force_argmin(inst: &RoutingInstance, grid: SimplexGrid) -> Result<Vec<f64>> {
    inst.validate()?;
    if grid.m != inst.base.len() || grid.resolution == 0 {
        return Err(GnnMoeError::dim("brute_force_argmin", inst.base.len(), grid.m));
    }
    let mut best = vec![0.0; grid.m];
    let mut best_j = f64::INFINITY;
    grid.for_each(|p| {
        let j = surrogate_value(p, inst);
        if j < best_j {
            best_j = j;
            best.copy_from_slice(p);
        }
    });

    let m = grid.m;
    let mut step = 1.0 / grid.resolution as f64;
    let mut trial = best.clone();
    while step > REFINE_TOLERANCE {
        let mut improved = false;
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                // move up to `step` of mass from j to i, staying on the simplex
                let delta = step.min(best[j]);
                if delta <= 0.0 {
                    continue;
                }
                trial.copy_from_slice(&best);
                trial[i] += delta;
                trial[j] -= delta;
                let v = surrogate_value(&trial, inst);
                if v < best_j {
                    best_j = v;
                    best.copy_from_slice(&trial);
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let total: f64 = best.iter().sum();
    Ok(best.into_iter().map(|p| p / total).collect())
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `θ = 1/η + δ_k / ln(kε/(m−k))`: every `λ ∈ [θ, 1/η)` makes the update an
/// ε-soft top-k of the gains when the base distribution is uniform.
pub fn epsilon_topk_threshold(m: usize, k: usize, epsilon: f64, step: f64, delta: f64) -> Result<f64> {
    if k == 0 || k >= m {
        return Err(GnnMoeError::InvalidArgument(format!("need 1 ≤ k < m, got k={k}, m={m}")));
    }
    let ratio = k as f64 * epsilon / (m - k) as f64;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(GnnMoeError::domain("epsilon_topk_threshold", format!("kε/(m−k) = {ratio} must lie in (0, 1)")));
    }
    if !(delta > 0.0) || !(step > 0.0) {
        return Err(GnnMoeError::domain("epsilon_topk_threshold", "need δ_k > 0 and η > 0"));
    }
    Ok(1.0 / step + delta / ratio.ln())
}

/// `u_(k) − u_(k+1)` for gains sorted in descending order.
pub fn gap_k(gains: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k >= gains.len() {
        return Err(GnnMoeError::InvalidArgument(format!("gap index k={k} needs 1 ≤ k < {}", gains.len())));
    }
    let mut sorted = gains.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[k - 1] - sorted[k])
}

/// Mass of `π` outside the top `k` entries of `u` (ties to the lower index).
pub fn tail_mass(pi: &[f64], gains: &[f64], k: usize) -> f64 {
    let top = top_k_indices(gains, k.min(gains.len()));
    pi.iter().enumerate().filter(|(i, _)| !top.contains(i)).map(|(_, &p)| p).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpeningReport {
    pub lambdas: Vec<f64>,
    pub entropies: Vec<f64>,
    pub strictly_decreasing: bool,
    pub argmax_constant: bool,
    /// `log πᵗ + η·u` is constant, so there is nothing to sharpen.
    pub skipped: bool,
}

impl SharpeningReport {
    pub fn passed(&self) -> bool {
        self.skipped || (self.strictly_decreasing && self.argmax_constant)
    }
}

/// Entropy and argmax of the update across an increasing `λ` grid.
pub fn verify_sharpening(base: &[f64], gains: &[f64], step: f64, lambdas: &[f64]) -> Result<SharpeningReport> {
    if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(GnnMoeError::InvalidArgument("λ grid must be strictly increasing".into()));
    }
    let s: Vec<f64> = base.iter().zip(gains).map(|(&b, &u)| b.ln() + step * u).collect();
    let spread = s.iter().copied().fold(f64::NEG_INFINITY, f64::max) - s.iter().copied().fold(f64::INFINITY, f64::min);
    let mut entropies = Vec::with_capacity(lambdas.len());
    let mut argmaxes = Vec::with_capacity(lambdas.len());
    for &coeff in lambdas {
        let inst = RoutingInstance {
            base: base.to_vec(),
            gains: gains.to_vec(),
            step,
            coeff,
        };
        let pi = mirror_descent_update(&inst)?;
        entropies.push(entropy(&pi));
        argmaxes.push(argmax(&pi));
    }
    let skipped = spread <= 1e-12 * s.iter().map(|x| x.abs()).fold(1.0, f64::max);
    Ok(SharpeningReport {
        lambdas: lambdas.to_vec(),
        strictly_decreasing: entropies.windows(2).all(|w| w[1] < w[0]),
        argmax_constant: argmaxes.windows(2).all(|w| w[0] == w[1]),
        entropies,
        skipped,
    })
}

/// Random strictly positive probability vector (normalized exponentials).
fn random_simplex_point(m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| -crate::rng::open_unit(rng).ln()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// `m = 4`, `η ~ U(0.1, 0.9)`, `λ ~ U(0, 0.9/η)`, gains `~ U(−2, 2)`,
/// interior base.
pub fn random_instance(rng: &mut RngState) -> RoutingInstance {
    let mut s = rng.stream();
    let step = s.random_range(0.1..0.9);
    let coeff = s.random_range(0.0..0.9 / step);
    RoutingInstance {
        base: random_simplex_point(4, &mut s),
        gains: (0..4).map(|_| s.random_range(-2.0..2.0)).collect(),
        step,
        coeff,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormCheck {
    pub instance: RoutingInstance,
    pub closed_form: Vec<f64>,
    pub brute_force: Vec<f64>,
    pub l1_gap: f64,
    /// Max abs difference from the tempered-softmax form.
    pub softmax_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryCase {
    pub gains: Vec<f64>,
    pub k: usize,
    pub epsilon: f64,
    pub step: f64,
    pub gap: f64,
    pub threshold: f64,
    pub lambdas: Vec<f64>,
    pub tail_masses: Vec<f64>,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollarySummary {
    pub cases: usize,
    pub checks: usize,
    pub violations: usize,
    pub failing: Vec<CorollaryCase>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub instances: usize,
    pub corollary_instances: usize,
    pub lambda_points: usize,
    pub grid_resolution: usize,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            instances: 100,
            corollary_instances: 50,
            lambda_points: 20,
            grid_resolution: 100,
            seed: 0,
        }
    }
}

/// Gains with `u_(k) − u_(k+1) ≥ 1`, in shuffled order.
fn gapped_gains(m: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gap = rng.random_range(1.0..3.0);
    let lower: Vec<f64> = (0..m - k).map(|_| rng.random_range(-1.0..0.0)).collect();
    let floor = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max) + gap;
    let mut gains: Vec<f64> = (0..k).map(|_| floor + rng.random_range(0.0..1.0)).chain(lower).collect();
    use rand::seq::SliceRandom;
    gains.shuffle(rng);
    gains
}

/// Uniform base distribution, `m = 4`, `k ∈ {1, 2}`, `ε ∈ {0.05, 0.1}`,
/// `δ_k ≥ 1`; `λ` sampled at `points` evenly spaced values in
/// `[max(θ, 0), 1/η)`.
pub fn corollary_sweep(cases: usize, points: usize, rng: &mut RngState) -> Result<CorollarySummary> {
    let m = 4;
    let mut summary = CorollarySummary {
        cases,
        checks: 0,
        violations: 0,
        failing: Vec::new(),
    };
    for c in 0..cases {
        let mut s = rng.stream();
        let k = 1 + c % 2;
        let epsilon = if (c / 2) % 2 == 0 { 0.05 } else { 0.1 };
        let step = s.random_range(0.1..0.9);
        let gains = gapped_gains(m, k, &mut s);
        let gap = gap_k(&gains, k)?;
        let threshold = epsilon_topk_threshold(m, k, epsilon, step, gap)?;
        let lo = threshold.max(0.0);
        let hi = 1.0 / step;
        let lambdas: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / points as f64).collect();
        let mut tail_masses = Vec::with_capacity(points);
        let mut violations = 0;
        for &coeff in &lambdas {
            let inst = RoutingInstance {
                base: vec![1.0 / m as f64; m],
                gains: gains.clone(),
                step,
                coeff,
            };
            let tail = tail_mass(&mirror_descent_update(&inst)?, &gains, k);
            if tail > epsilon {
                violations += 1;
            }
            tail_masses.push(tail);
        }
        summary.checks += points;
        summary.violations += violations;
        if violations > 0 {
            summary.failing.push(CorollaryCase {
                gains,
                k,
                epsilon,
                step,
                gap,
                threshold,
                lambdas,
                tail_masses,
                violations,
            });
        }
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub config: TheoryConfig,
    pub closed_form: Vec<ClosedFormCheck>,
    pub closed_form_matches: usize,
    pub max_l1_gap: f64,
    pub max_softmax_gap: f64,
    pub sharpening: Vec<SharpeningReport>,
    pub sharpening_violations: usize,
    pub corollary: CorollarySummary,
}

pub const CLOSED_FORM_TOLERANCE: f64 = 1e-3;
pub const SOFTMAX_TOLERANCE: f64 = 1e-12;

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.closed_form_matches == self.closed_form.len()
            && self.max_softmax_gap <= SOFTMAX_TOLERANCE
            && self.sharpening_violations == 0
            && self.corollary.violations == 0
    }
}

/// Closed form vs brute force, temperature identity, sharpening, and the
/// ε-soft top-k sweep, all from one seed.
pub fn run_theory_suite(cfg: &TheoryConfig) -> Result<TheoryReport> {
    let root = RngState::new(cfg.seed);
    let mut rng = root.fork(1);
    let grid = SimplexGrid {
        m: 4,
        resolution: cfg.grid_resolution,
    };
    let mut closed_form = Vec::with_capacity(cfg.instances);
    let mut sharpening = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let instance = random_instance(&mut rng);
        let cf = mirror_descent_update(&instance)?;
        let bf = brute_force_argmin(&instance, grid)?;
        let soft = tempered_softmax(&instance)?;
        let softmax_gap = cf.iter().zip(&soft).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // increasing λ grid over [0, 0.9/η]
        let lambdas: Vec<f64> = (0..6).map(|i| 0.9 / instance.step * i as f64 / 5.0).collect();
        sharpening.push(verify_sharpening(&instance.base, &instance.gains, instance.step, &lambdas)?);
        closed_form.push(ClosedFormCheck {
            l1_gap: l1_distance(&cf, &bf),
            closed_form: cf,
            brute_force: bf,
            softmax_gap,
            instance,
        });
    }
    let corollary = corollary_sweep(cfg.corollary_instances, cfg.lambda_points, &mut root.fork(2))?;
    Ok(TheoryReport {
        config: *cfg,
        closed_form_matches: closed_form.iter().filter(|c| c.l1_gap <= CLOSED_FORM_TOLERANCE).count(),
        max_l1_gap: closed_form.iter().map(|c| c.l1_gap).fold(0.0, f64::max),
        max_softmax_gap: closed_form.iter().map(|c| c.softmax_gap).fold(0.0, f64::max),
        sharpening_violations: sharpening.iter().filter(|s| !s.passed()).count(),
        closed_form,
        sharpening,
        corollary,
    })
}
