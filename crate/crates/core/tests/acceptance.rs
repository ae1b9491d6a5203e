//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero when any
//! criterion that could be evaluated fails. A criterion whose input data is
//! not present on this machine is reported as FAIL with the reason and does
//! not affect the exit status.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{worst_model_gradient_error, END_TO_END_TOLERANCE};
use gnnmoe::autodiff::{grad_check, ElementwiseKind, Operand, Tape, Var, LAYER_NORM_EPS};
use gnnmoe::experts::{ExpertKind, PropagationKind};
use gnnmoe::graph::{
    attention_pattern, generate_sbm, load_dataset, load_splits, make_splits, normalize_adjacency, GraphDataset,
    SbmParams, SplitSpec, DEFAULT_SPLIT_RATIOS,
};
use gnnmoe::model::ModelConfig;
use gnnmoe::rng::RngState;
use gnnmoe::routing::RouterKind;
use gnnmoe::tensor::DenseMatrix;
use gnnmoe::theory::{run_theory_suite, TheoryConfig, CLOSED_FORM_TOLERANCE, SOFTMAX_TOLERANCE};
use gnnmoe::train::{train, TrainConfig, TrainOutcome};
use rand::Rng;

const PER_OP_TOLERANCE: f64 = 1e-4;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
const THEORY_INSTANCES: usize = 100;
const ORACLE_BUDGET: Duration = Duration::from_secs(5 * 60);
const COROLLARY_CASES: usize = 50;
const COROLLARY_POINTS: usize = 20;
const ROW_SUM_TOLERANCE: f64 = 1e-6;
/// Float slack on the upper end of `[0, ln 4]`.
const ROUTE_LOSS_SLACK: f64 = 1e-12;
const ENTROPY_MARGIN: f64 = 1e-3;
const HOMOPHILOUS_TARGET: f64 = 0.90;
const HOMOPHILOUS_BUDGET: Duration = Duration::from_secs(2 * 60);
const DIVERSITY_SEEDS: u64 = 5;
const CHAMELEON_SEEDS: u64 = 10;
const CHAMELEON_TARGET: f64 = 0.42;
const REAL_DATA_BUDGET: Duration = Duration::from_secs(10 * 60);
/// Directory holding the Chameleon-fix dataset in the on-disk layout.
const CHAMELEON_ENV: &str = "GNNMOE_CHAMELEON_DIR";

struct Verdict {
    id: &'static str,
    passed: bool,
    /// `false` when the criterion could not be evaluated here.
    counted: bool,
    detail: String,
}

impl Verdict {
    fn new(id: &'static str, passed: bool, detail: String) -> Self {
        Verdict {
            id,
            passed,
            counted: true,
            detail,
        }
    }

    fn unavailable(id: &'static str, detail: String) -> Self {
        Verdict {
            id,
            passed: false,
            counted: false,
            detail,
        }
    }

    fn print(&self) {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        println!("{tag} criterion {:<3} {}", self.id, self.detail);
    }
}

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> DenseMatrix {
    let mut s = RngState::new(seed).stream();
    let data = (0..rows * cols).map(|_| s.random_range(lo..hi)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

/// `Σ w ∘ x` with fixed random weights.
fn probe(t: &mut Tape, x: Var, seed: u64) -> gnnmoe::Result<Var> {
    let (r, c) = t.value(x).shape();
    let w = t.constant(random_matrix(r, c, -1.0, 1.0, seed));
    let y = t.hadamard(x, w)?;
    t.sum_all(y)
}

const FD_STEP: f64 = 1e-5;

type OpCheck = (&'static str, Box<dyn Fn() -> gnnmoe::Result<f64>>);

fn primitive_checks() -> Vec<OpCheck> {
    let g = generate_sbm(
        &SbmParams {
            nodes: 10,
            p_in: 0.5,
            p_out: 0.2,
            feature_dim: 4,
            ..Default::default()
        },
        &mut RngState::new(3),
    )
    .unwrap();
    let a_hat = Arc::new(normalize_adjacency(&g));
    let pattern = Arc::new(attention_pattern(&g));
    let x = || random_matrix(4, 3, -2.0, 2.0, 1);
    let mut checks: Vec<OpCheck> = vec![
        (
            "matmul",
            Box::new(move || {
                grad_check(&[x(), random_matrix(3, 2, -2.0, 2.0, 2)], FD_STEP, |t, v| {
                    let y = t.matmul(v[0], v[1])?;
                    probe(t, y, 3)
                })
            }),
        ),
        (
            "spmm",
            Box::new(move || {
                let a_hat = a_hat.clone();
                grad_check(&[random_matrix(10, 3, -2.0, 2.0, 4)], FD_STEP, move |t, v| {
                    let y = t.spmm(&a_hat, v[0])?;
                    probe(t, y, 5)
                })
            }),
        ),
        (
            "rowwise_softmax",
            Box::new(move || {
                grad_check(&[x()], FD_STEP, |t, v| {
                    let y = t.rowwise_softmax(v[0], 0.7)?;
                    probe(t, y, 6)
                })
            }),
        ),
        (
            "topk_softmax",
            Box::new(move || {
                grad_check(&[random_matrix(4, 4, -2.0, 2.0, 7)], FD_STEP, |t, v| {
                    let y = t.topk_softmax(v[0], 2)?;
                    probe(t, y, 8)
                })
            }),
        ),
        (
            "layer_norm",
            Box::new(move || {
                let gain = random_matrix(1, 3, 0.5, 1.5, 9);
                let bias = random_matrix(1, 3, -0.5, 0.5, 10);
                grad_check(&[x(), gain, bias], FD_STEP, |t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)?;
                    probe(t, y, 11)
                })
            }),
        ),
        (
            "dropout",
            Box::new(move || {
                grad_check(&[x()], FD_STEP, |t, v| {
                    let y = t.dropout(v[0], 0.5, &mut RngState::new(12), true)?;
                    probe(t, y, 13)
                })
            }),
        ),
        (
            "gumbel_softmax (relaxed)",
            Box::new(move || {
                grad_check(&[x()], FD_STEP, |t, v| {
                    let y = t.gumbel_softmax(v[0], 0.8, false, &mut RngState::new(14), true)?;
                    probe(t, y, 15)
                })
            }),
        ),
        (
            "mean_rows",
            Box::new(move || {
                grad_check(&[x()], FD_STEP, |t, v| {
                    let y = t.mean_rows(v[0])?;
                    probe(t, y, 16)
                })
            }),
        ),
        (
            "softmax_cross_entropy",
            Box::new(move || {
                let onehot = DenseMatrix::from_rows(&[
                    vec![1.0, 0.0, 0.0],
                    vec![0.0, 0.0, 1.0],
                    vec![0.0, 1.0, 0.0],
                    vec![1.0, 0.0, 0.0],
                ]);
                grad_check(&[x()], FD_STEP, move |t, v| t.softmax_cross_entropy(v[0], &onehot, &[0, 2, 3]))
            }),
        ),
        (
            "mean_row_entropy",
            Box::new(move || {
                let p = random_matrix(3, 4, 0.05, 1.0, 17);
                let q = random_matrix(3, 4, 0.05, 1.0, 18);
                grad_check(&[p, q], FD_STEP, |t, v| t.mean_row_entropy(&[v[0], v[1]], 1e-12))
            }),
        ),
        (
            "scale_rows_by_column",
            Box::new(move || {
                grad_check(&[x(), random_matrix(4, 2, 0.1, 1.0, 19)], FD_STEP, |t, v| {
                    let y = t.scale_rows_by_column(v[0], v[1], 1)?;
                    probe(t, y, 20)
                })
            }),
        ),
        (
            "scale_by_entry",
            Box::new(move || {
                grad_check(&[x(), random_matrix(1, 3, -1.0, 1.0, 21)], FD_STEP, |t, v| {
                    let y = t.scale_by_entry(v[0], v[1], 0, 2)?;
                    probe(t, y, 22)
                })
            }),
        ),
        (
            "attention_aggregate",
            Box::new(move || {
                let pattern = pattern.clone();
                let inputs = [
                    random_matrix(10, 3, -1.0, 1.0, 23),
                    random_matrix(1, 3, -1.0, 1.0, 24),
                    random_matrix(1, 3, -1.0, 1.0, 25),
                ];
                grad_check(&inputs, FD_STEP, move |t, v| {
                    let y = t.attention_aggregate(&pattern, v[0], v[1], v[2])?;
                    probe(t, y, 26)
                })
            }),
        ),
    ];
    use ElementwiseKind as K;
    for (i, kind) in [
        K::Add,
        K::Sub,
        K::Hadamard,
        K::Scale,
        K::Relu,
        K::LeakyRelu,
        K::Sigmoid,
        K::Swish,
        K::Gelu,
        K::Log,
        K::Exp,
    ]
    .into_iter()
    .enumerate()
    {
        let name: &'static str = Box::leak(format!("elementwise {kind:?}").into_boxed_str());
        checks.push((
            name,
            Box::new(move || {
                let (lo, hi) = if kind == K::Log { (0.5, 2.0) } else { (-2.0, 2.0) };
                let a = random_matrix(3, 3, lo, hi, 40 + i as u64);
                let b = random_matrix(3, 3, -2.0, 2.0, 60 + i as u64);
                grad_check(&[a, b], FD_STEP, move |t, v| {
                    let operand = match kind {
                        K::Add | K::Sub | K::Hadamard => Operand::Node(v[1]),
                        K::Scale => Operand::Scalar(-1.7),
                        _ => Operand::None,
                    };
                    let y = t.elementwise(kind, v[0], operand)?;
                    probe(t, y, 80 + i as u64)
                })
            }),
        ));
    }
    checks
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut worst_op = (0.0f64, "");
    let mut errors = Vec::new();
    for (name, check) in primitive_checks() {
        match check() {
            Ok(e) if e > worst_op.0 => worst_op = (e, name),
            Ok(_) => {}
            Err(e) => errors.push(format!("{name}: {e}")),
        }
    }
    let mut worst_model = (0.0f64, String::new());
    for (prop, router) in [
        (PropagationKind::Gcn, RouterKind::Soft),
        (PropagationKind::Sage, RouterKind::Soft),
        (PropagationKind::Gat, RouterKind::Soft),
        (PropagationKind::Gcn, RouterKind::DotAttention),
    ] {
        let cfg = ModelConfig {
            hidden: 8,
            blocks: 2,
            prop,
            router,
            dropout: 0.0,
            ..Default::default()
        };
        let e = worst_model_gradient_error(cfg, 3);
        if e > worst_model.0 {
            worst_model = (e, format!("{prop}/{router}"));
        }
    }
    let elapsed = start.elapsed();
    let passed = errors.is_empty()
        && worst_op.0 < PER_OP_TOLERANCE
        && worst_model.0 < END_TO_END_TOLERANCE
        && elapsed < GRADIENT_BUDGET;
    Verdict::new(
        "1",
        passed,
        format!(
            "gradient integrity: worst per-op rel err {:.2e} ({}) < {PER_OP_TOLERANCE:e}; worst 2-block model rel err {:.2e} ({}) < {END_TO_END_TOLERANCE:e}; {:.1}s < {}s{}",
            worst_op.0,
            worst_op.1,
            worst_model.0,
            worst_model.1,
            elapsed.as_secs_f64(),
            GRADIENT_BUDGET.as_secs(),
            if errors.is_empty() { String::new() } else { format!("; errors: {errors:?}") }
        ),
    )
}

fn criteria_2_to_5() -> Vec<Verdict> {
    let cfg = TheoryConfig {
        instances: THEORY_INSTANCES,
        corollary_instances: COROLLARY_CASES,
        lambda_points: COROLLARY_POINTS,
        ..TheoryConfig::default()
    };
    let start = Instant::now();
    let report = match run_theory_suite(&cfg) {
        Ok(r) => r,
        Err(e) => {
            return ["2", "3", "4", "5"]
                .into_iter()
                .map(|id| Verdict::new(id, false, format!("theory suite failed: {e}")))
                .collect();
        }
    };
    let elapsed = start.elapsed();
    let skipped = report.sharpening.iter().filter(|s| s.skipped).count();
    vec![
        Verdict::new(
            "2",
            report.closed_form.len() == THEORY_INSTANCES
                && report.closed_form_matches == THEORY_INSTANCES
                && elapsed < ORACLE_BUDGET,
            format!(
                "closed-form update vs brute-force argmin: {}/{} within L1 {CLOSED_FORM_TOLERANCE:e} (max gap {:.2e}); {:.1}s < {}s",
                report.closed_form_matches,
                report.closed_form.len(),
                report.max_l1_gap,
                elapsed.as_secs_f64(),
                ORACLE_BUDGET.as_secs()
            ),
        ),
        Verdict::new(
            "3",
            report.max_softmax_gap <= SOFTMAX_TOLERANCE,
            format!(
                "tempered-softmax identity: max abs gap {:.2e} <= {SOFTMAX_TOLERANCE:e} over {} instances",
                report.max_softmax_gap,
                report.closed_form.len()
            ),
        ),
        Verdict::new(
            "4",
            report.corollary.cases == COROLLARY_CASES
                && report.corollary.checks == COROLLARY_CASES * COROLLARY_POINTS
                && report.corollary.violations == 0,
            format!(
                "epsilon-soft top-k sweep: {} violations over {} cases x {} lambda points",
                report.corollary.violations, report.corollary.cases, COROLLARY_POINTS
            ),
        ),
        Verdict::new(
            "5",
            report.sharpening.len() == THEORY_INSTANCES && report.sharpening_violations == 0 && skipped == 0,
            format!(
                "sharpening monotonicity: {} violations on {} instances ({} skipped as constant)",
                report.sharpening_violations,
                report.sharpening.len(),
                skipped
            ),
        ),
    ]
}

fn homophilous_sbm() -> GraphDataset {
    generate_sbm(&SbmParams::default(), &mut RngState::new(0)).unwrap()
}

/// Disassortative: edges are five times likelier across classes.
fn heterophilous_sbm() -> GraphDataset {
    generate_sbm(
        &SbmParams {
            p_in: 0.01,
            p_out: 0.05,
            ..Default::default()
        },
        &mut RngState::new(0),
    )
    .unwrap()
}

fn splits(g: &GraphDataset, seed: u64) -> SplitSpec {
    make_splits(g, DEFAULT_SPLIT_RATIOS, seed).unwrap()
}

struct Timed {
    outcome: TrainOutcome,
    elapsed: Duration,
}

fn timed_train(g: &GraphDataset, split: &SplitSpec, cfg: TrainConfig) -> Timed {
    let start = Instant::now();
    let outcome = train(g, split, &cfg).unwrap();
    Timed {
        outcome,
        elapsed: start.elapsed(),
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_6(runs: &[&TrainOutcome]) -> Verdict {
    let ln4 = 4f64.ln();
    let (mut epochs, mut worst_row, mut min_weight) = (0usize, 0.0f64, f64::INFINITY);
    let (mut route_lo, mut route_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for run in runs {
        for e in &run.history.epochs {
            epochs += 1;
            worst_row = worst_row.max(e.routing_row_error);
            min_weight = min_weight.min(e.routing_min);
            if let Some(r) = e.route_loss {
                route_lo = route_lo.min(r);
                route_hi = route_hi.max(r);
            }
        }
        for rec in &run.routing {
            let (err, negative) = rec.check();
            worst_row = worst_row.max(err);
            if negative {
                min_weight = min_weight.min(-1.0);
            }
        }
    }
    let passed =
        epochs > 0 && worst_row <= ROW_SUM_TOLERANCE && min_weight >= 0.0 && route_lo >= 0.0 && route_hi <= ln4 + ROUTE_LOSS_SLACK;
    Verdict::new(
        "6",
        passed,
        format!(
            "routing invariants over {} runs / {epochs} epochs: max |row sum - 1| {worst_row:.2e}, min weight {min_weight:.3e}, route loss in [{route_lo:.4}, {route_hi:.4}] within [0, ln 4]",
            runs.len()
        ),
    )
}

fn criterion_7(g: &GraphDataset) -> (Verdict, Vec<TrainOutcome>) {
    let split = splits(g, 0);
    let at = |lambda: f64| timed_train(g, &split, TrainConfig { lambda, ..Default::default() }).outcome;
    let (zero, one) = (at(0.0), at(1.0));
    let (e0, e1) = (mean(zero.routing_entropy()), mean(one.routing_entropy()));
    let v = Verdict::new(
        "7",
        e1 <= e0 - ENTROPY_MARGIN,
        format!("entropy regularization: mean routing entropy {e1:.4} at lambda=1 vs {e0:.4} at lambda=0 (margin {ENTROPY_MARGIN:e})"),
    );
    (v, vec![zero, one])
}

fn criterion_8_and_10(g: &GraphDataset) -> (Verdict, Verdict, TrainOutcome) {
    let split = splits(g, 0);
    let cfg = TrainConfig::default();
    let first = timed_train(g, &split, cfg);
    let acc = first.outcome.test_acc;
    let epochs = first.outcome.history.epochs.len();
    let v8 = Verdict::new(
        "8",
        acc >= HOMOPHILOUS_TARGET && epochs <= cfg.max_epochs && first.elapsed <= HOMOPHILOUS_BUDGET,
        format!(
            "homophilous SBM, default config, seed 0: test accuracy {acc:.4} >= {HOMOPHILOUS_TARGET} after {epochs} epochs in {:.1}s (budget {}s)",
            first.elapsed.as_secs_f64(),
            HOMOPHILOUS_BUDGET.as_secs()
        ),
    );
    let second = timed_train(g, &split, cfg);
    let (a, b) = (first.outcome.history.to_csv(), second.outcome.history.to_csv());
    let v10 = Verdict::new(
        "10",
        a.as_bytes() == b.as_bytes() && first.outcome.model.params == second.outcome.model.params,
        format!("determinism: repeated seed-0 run gives byte-identical metrics.csv ({} bytes) and parameters", a.len()),
    );
    (v8, v10, first.outcome)
}

fn criterion_9(g: &GraphDataset) -> (Verdict, Vec<TrainOutcome>) {
    let base = TrainConfig::default();
    let mut variants: Vec<(String, TrainConfig)> = vec![("full".into(), base)];
    let mut no_sr = base;
    no_sr.model.router = RouterKind::Mean;
    variants.push(("w/o-SR".into(), no_sr));
    let mut only_pp = base;
    only_pp.model.router = RouterKind::Forced(ExpertKind::PP);
    variants.push(("single-expert-PP".into(), only_pp));

    let mut means = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut outcomes = Vec::new();
    for (_, cfg) in &variants {
        let mut accs = Vec::new();
        for seed in 0..DIVERSITY_SEEDS {
            let run = timed_train(g, &splits(g, seed), TrainConfig { seed, ..*cfg });
            slowest = slowest.max(run.elapsed);
            accs.push(run.outcome.test_acc);
            outcomes.push(run.outcome);
        }
        means.push(mean(accs));
    }
    let passed = means[1..].iter().all(|&m| means[0] >= m) && slowest <= REAL_DATA_BUDGET;
    let table: Vec<String> = variants.iter().zip(&means).map(|((name, _), m)| format!("{name} {m:.4}")).collect();
    let v = Verdict::new(
        "9a",
        passed,
        format!(
            "expert diversity on heterophilous SBM over {DIVERSITY_SEEDS} seeds: mean test accuracy {}; full must be >= each; slowest seed {:.1}s",
            table.join(", "),
            slowest.as_secs_f64()
        ),
    );
    (v, outcomes)
}

fn criterion_9_real_data() -> Verdict {
    let Some(dir) = std::env::var_os(CHAMELEON_ENV).map(PathBuf::from).filter(|d| d.is_dir()) else {
        return Verdict::unavailable(
            "9b",
            format!(
                "Chameleon-fix mean test accuracy >= {CHAMELEON_TARGET}: NOT EVALUATED, dataset not available on this machine (set {CHAMELEON_ENV}); not counted in the exit status"
            ),
        );
    };
    let g = match load_dataset(&dir) {
        Ok(g) => g,
        Err(e) => return Verdict::new("9b", false, format!("Chameleon-fix at {}: {e}", dir.display())),
    };
    let mut accs = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..CHAMELEON_SEEDS {
        let split = match load_splits(&dir, seed, g.num_nodes()) {
            Ok(Some(s)) => s,
            Ok(None) => splits(&g, seed),
            Err(e) => return Verdict::new("9b", false, format!("splits: {e}")),
        };
        let run = timed_train(&g, &split, TrainConfig { seed, ..Default::default() });
        slowest = slowest.max(run.elapsed);
        accs.push(run.outcome.test_acc);
    }
    let m = mean(accs);
    Verdict::new(
        "9b",
        m >= CHAMELEON_TARGET && slowest <= REAL_DATA_BUDGET,
        format!(
            "Chameleon-fix ({} nodes), default config, {CHAMELEON_SEEDS} seeds: mean test accuracy {m:.4} >= {CHAMELEON_TARGET}; slowest seed {:.1}s",
            g.num_nodes(),
            slowest.as_secs_f64()
        ),
    )
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gnnmoe")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn criterion_11(scratch: &Path) -> Verdict {
    let data = scratch.join("sbm");
    let (a, b) = (scratch.join("lambda0"), scratch.join("no-route-loss"));
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let steps = [
        vec!["generate-sbm".to_string(), "--out".into(), p(&data)],
        vec!["train".into(), "--data".into(), p(&data), "--seeds".into(), "0".into(), "--lambda".into(), "0".into(), "--out".into(), p(&a)],
        vec!["train".into(), "--data".into(), p(&data), "--seeds".into(), "0".into(), "--variant".into(), "no-route-loss".into(), "--out".into(), p(&b)],
    ];
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        if let Err(e) = cli(&args) {
            return Verdict::new("11", false, format!("ablation equivalence: {args:?} failed: {e}"));
        }
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap_or_default();
    let rows = |d: &Path| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_slice(&read(d, "results.json")).unwrap_or_default();
        for row in v["rows"].as_array_mut().into_iter().flatten() {
            row.as_object_mut().map(|o| o.remove("variant"));
        }
        v["rows"].clone()
    };
    let same_rows = rows(&a) == rows(&b) && !rows(&a).is_null();
    let same_files = ["seed_0/metrics.csv", "seed_0/routing.csv"].iter().all(|f| {
        let x = read(&a, f);
        !x.is_empty() && x == read(&b, f)
    });
    Verdict::new(
        "11",
        same_rows && same_files,
        format!("ablation equivalence: `--variant no-route-loss` vs `--lambda 0`, seed 0: identical result rows {same_rows}, identical metrics/routing files {same_files}"),
    )
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let homophilous = homophilous_sbm();
    let heterophilous = heterophilous_sbm();

    let mut verdicts = vec![criterion_1()];
    verdicts.extend(criteria_2_to_5());
    let (v8, v10, homophilous_run) = criterion_8_and_10(&homophilous);
    let (v7, lambda_runs) = criterion_7(&heterophilous);
    let (v9, diversity_runs) = criterion_9(&heterophilous);
    let mut runs: Vec<&TrainOutcome> = vec![&homophilous_run];
    runs.extend(&lambda_runs);
    runs.extend(&diversity_runs);
    verdicts.push(criterion_6(&runs));
    verdicts.extend([v7, v8, v9, criterion_9_real_data(), v10, criterion_11(scratch.path())]);

    for v in &verdicts {
        v.print();
    }
    let counted: Vec<&Verdict> = verdicts.iter().filter(|v| v.counted).collect();
    let failed: Vec<&str> = counted.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    let unevaluated: Vec<&str> = verdicts.iter().filter(|v| !v.counted).map(|v| v.id).collect();
    println!(
        "acceptance: {}/{} evaluated criteria passed; failed {:?}; not evaluated {:?}",
        counted.len() - failed.len(),
        counted.len(),
        failed,
        unevaluated
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
