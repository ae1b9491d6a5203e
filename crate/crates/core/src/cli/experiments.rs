//! Command implementations. Every command writes its manifest before doing
//! any work and lists each produced file in it on completion.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde_json::json;

use super::output::{
    parse_routing_csv, routing_rows, DatasetFingerprint, MultiVariantResults, ResultRow, RunManifest, VariantSummary,
    ROUTING_HEADER,
};
use super::{AblateCmd, CompareCmd, ExportCmd, ObserveCmd, SbmCmd, TheoryCmd, TrainArgs, TrainCmd};
use crate::effn::{ActivationExpertKind, HardRouting};
use crate::experts::ExpertKind;
use crate::graph::{
    generate_sbm, generate_sbm_blocks, load_dataset, load_splits, make_splits, mixed_block_matrix,
    partition_subspaces, save_dataset, GraphDataset, GraphOperators, SbmParams, SplitSpec, DEFAULT_SPLIT_RATIOS,
};
use crate::rng::RngState;
use crate::routing::RouterKind;
use crate::theory::{run_theory_suite, TheoryConfig, CLOSED_FORM_TOLERANCE, SOFTMAX_TOLERANCE};
use crate::train::{train, TrainConfig, TrainOutcome};

/// Router temperature of the `delta-tau` variant unless overridden.
pub const DEFAULT_DELTA_TAU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Mean router instead of the soft router.
    NoSr,
    NoEffn,
    /// EFFN fixed to SwishGLU.
    NoHr,
    NoAres,
    /// `λ = 0`.
    NoRouteLoss,
    /// `λ = 0` with a fixed router temperature.
    DeltaTau,
}

pub const ABLATIONS: [Variant; 6] =
    [Variant::NoSr, Variant::NoEffn, Variant::NoHr, Variant::NoAres, Variant::NoRouteLoss, Variant::DeltaTau];

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSr => "no-sr",
            Variant::NoEffn => "no-effn",
            Variant::NoHr => "no-hr",
            Variant::NoAres => "no-ares",
            Variant::NoRouteLoss => "no-route-loss",
            Variant::DeltaTau => "delta-tau",
        }
    }

    pub fn apply(self, mut cfg: TrainConfig, temperature: f64) -> TrainConfig {
        match self {
            Variant::Full => {}
            Variant::NoSr => cfg.model.router = RouterKind::Mean,
            Variant::NoEffn => cfg.model.use_effn = false,
            Variant::NoHr => cfg.model.hard_routing = HardRouting::Fixed(ActivationExpertKind::SwishGlu),
            Variant::NoAres => cfg.model.adaptive_residual = false,
            Variant::NoRouteLoss => cfg.lambda = 0.0,
            Variant::DeltaTau => {
                cfg.lambda = 0.0;
                cfg.model.temperature = temperature;
            }
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Variant::Full].into_iter().chain(ABLATIONS).find(|v| v.as_str() == s).ok_or_else(|| {
            let known: Vec<&str> = [Variant::Full].into_iter().chain(ABLATIONS).map(Variant::as_str).collect();
            format!("unknown variant {s:?} (expected one of {})", known.join(", "))
        })
    }
}

struct Workspace {
    g: GraphDataset,
    splits: Vec<SplitSpec>,
    seeds: Vec<u64>,
}

impl Workspace {
    /// Loads the dataset and one split per seed: the stored split when
    /// `splits.json` has one, otherwise a stratified split drawn from the seed.
    fn load(args: &TrainArgs) -> Result<Self> {
        let g = load_dataset(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
        let seeds = args.seeds.0.clone();
        let splits = seeds
            .iter()
            .map(|&s| match load_splits(&args.data, s, g.num_nodes())? {
                Some(sp) => Ok(sp),
                None => make_splits(&g, DEFAULT_SPLIT_RATIOS, s),
            })
            .collect::<crate::Result<Vec<_>>>()?;
        Ok(Workspace { g, splits, seeds })
    }

    fn fingerprint(&self) -> Option<DatasetFingerprint> {
        Some(DatasetFingerprint::of(&self.g))
    }
}

/// Trains `cfg` on every seed, writing `<prefix>seed_<s>/metrics.csv`,
/// `<prefix>seed_<s>/routing.csv` and `<prefix>routing.csv`.
fn run_variant(
    ws: &Workspace,
    manifest: &mut RunManifest,
    prefix: &str,
    label: &str,
    cfg: TrainConfig,
) -> Result<(VariantSummary, Vec<TrainOutcome>)> {
    let mut rows = Vec::with_capacity(ws.seeds.len());
    let mut outcomes = Vec::with_capacity(ws.seeds.len());
    let mut all_routing = String::from(ROUTING_HEADER);
    for (&seed, split) in ws.seeds.iter().zip(&ws.splits) {
        let out = train(&ws.g, split, &TrainConfig { seed, ..cfg }).with_context(|| format!("{label}, seed {seed}"))?;
        eprintln!(
            "{label} seed {seed}: test {:.4} val {:.4} (best epoch {} of {})",
            out.test_acc,
            out.val_acc,
            out.history.best_epoch,
            out.history.epochs.len()
        );
        let routing = routing_rows(seed, &out.routing);
        manifest.emit(format!("{prefix}seed_{seed}/metrics.csv"), out.history.to_csv().as_bytes())?;
        manifest.emit(format!("{prefix}seed_{seed}/routing.csv"), format!("{ROUTING_HEADER}{routing}").as_bytes())?;
        all_routing.push_str(&routing);
        rows.push(ResultRow::new(&ws.g.name, label, seed, &out));
        outcomes.push(out);
    }
    manifest.emit(format!("{prefix}routing.csv"), all_routing.as_bytes())?;
    Ok((VariantSummary::new(&ws.g.name, label, cfg, rows), outcomes))
}

/// Trains each `(label, config)` pair into its own subdirectory and writes
/// `results.json`.
fn run_variants(
    ws: &Workspace,
    manifest: &mut RunManifest,
    variants: &[(String, TrainConfig)],
) -> Result<Vec<(VariantSummary, Vec<TrainOutcome>)>> {
    let mut done = Vec::with_capacity(variants.len());
    for (label, cfg) in variants {
        done.push(run_variant(ws, manifest, &format!("{label}/"), label, *cfg)?);
    }
    let results = MultiVariantResults {
        dataset: ws.g.name.clone(),
        variants: done.iter().map(|(s, _)| s.clone()).collect(),
    };
    manifest.emit_json("results.json", &results)?;
    Ok(done)
}

pub fn cmd_train(cmd: &TrainCmd) -> Result<ExitCode> {
    let ws = Workspace::load(&cmd.common)?;
    let cfg = cmd.variant.apply(cmd.common.config(), cmd.temperature);
    let mut manifest = RunManifest::start(
        "train",
        serde_json::to_value(TrainConfig { seed: ws.seeds[0], ..cfg })?,
        ws.fingerprint(),
        &ws.seeds,
        &cmd.common.out,
    )?;
    let (summary, _) = run_variant(&ws, &mut manifest, "", cmd.variant.as_str(), cfg)?;
    eprintln!("mean test accuracy {:.4} ± {:.4}", summary.mean_test_acc, summary.std_test_acc);
    manifest.emit_json("results.json", &summary)?;
    manifest.finish()?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_ablate(cmd: &AblateCmd) -> Result<ExitCode> {
    let ws = Workspace::load(&cmd.common)?;
    let names: Vec<Variant> = if cmd.variant.is_empty() { ABLATIONS.to_vec() } else { cmd.variant.clone() };
    let base = cmd.common.config();
    let variants: Vec<(String, TrainConfig)> =
        names.iter().map(|v| (v.as_str().to_string(), v.apply(base, cmd.temperature))).collect();
    let mut manifest = RunManifest::start(
        "ablate",
        json!({ "base": base, "variants": names.iter().map(|v| v.as_str()).collect::<Vec<_>>(), "temperature": cmd.temperature }),
        ws.fingerprint(),
        &ws.seeds,
        &cmd.common.out,
    )?;
    run_variants(&ws, &mut manifest, &variants)?;
    manifest.finish()?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_compare_routing(cmd: &CompareCmd) -> Result<ExitCode> {
    let ws = Workspace::load(&cmd.common)?;
    let base = cmd.common.config();
    let ks: Vec<usize> = cmd.topk.map_or(vec![1, 2, 3], |k| vec![k]);
    let routers: Vec<RouterKind> = [RouterKind::Soft, RouterKind::Mean]
        .into_iter()
        .chain(ks.into_iter().map(RouterKind::TopK))
        .chain([RouterKind::DotAttention])
        .collect();
    let variants: Vec<(String, TrainConfig)> = routers
        .iter()
        .map(|&r| {
            let mut cfg = base;
            cfg.model.router = r;
            (r.label(), cfg)
        })
        .collect();
    let mut manifest = RunManifest::start(
        "compare-routing",
        json!({ "base": base, "routers": routers.iter().map(|r| r.label()).collect::<Vec<_>>() }),
        ws.fingerprint(),
        &ws.seeds,
        &cmd.common.out,
    )?;
    let done = run_variants(&ws, &mut manifest, &variants)?;
    let mut table = String::from("router,mean_test_acc,std_test_acc,mean_val_acc,std_val_acc,mean_routing_entropy\n");
    for (s, _) in &done {
        let ent = if s.mean_routing_entropy.is_empty() {
            f64::NAN
        } else {
            s.mean_routing_entropy.iter().sum::<f64>() / s.mean_routing_entropy.len() as f64
        };
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.variant, s.mean_test_acc, s.std_test_acc, s.mean_val_acc, s.std_val_acc, ent
        ));
    }
    manifest.emit("comparison.csv", table.as_bytes())?;
    manifest.finish()?;
    Ok(ExitCode::SUCCESS)
}

pub const SUBSPACES_HEADER: &str =
    "h_bin,h_lo,h_hi,d_bin,d_lo,d_hi,nodes,test_evaluations,acc_PP,acc_PT,acc_TP,acc_TT,winner\n";

/// Trains one forced single-expert model per scheme and seed, then scores
/// each scheme on the test nodes of every (homophily, degree) subspace,
/// pooled over seeds; `test_evaluations` counts (seed, test node) pairs. Accuracies and the winner are empty for subspaces
/// without test nodes; ties go to the earlier scheme in PP, PT, TP, TT order.
pub fn cmd_observe_subspaces(cmd: &ObserveCmd) -> Result<ExitCode> {
    let ws = Workspace::load(&cmd.common)?;
    let base = cmd.common.config();
    let variants: Vec<(String, TrainConfig)> = ExpertKind::ALL
        .iter()
        .map(|&e| {
            let mut cfg = base;
            cfg.model.router = RouterKind::Forced(e);
            (cfg.model.router.label(), cfg)
        })
        .collect();
    let mut manifest = RunManifest::start(
        "observe-subspaces",
        json!({ "base": base, "homophily_bins": cmd.homophily_bins, "degree_bins": cmd.degree_bins }),
        ws.fingerprint(),
        &ws.seeds,
        &cmd.common.out,
    )?;
    let done = run_variants(&ws, &mut manifest, &variants)?;

    let profile = partition_subspaces(&ws.g, cmd.homophily_bins, cmd.degree_bins);
    let ops = GraphOperators::new(&ws.g);
    // correct[e][node] counts seeds where scheme e classified a test node correctly
    let mut correct = vec![vec![0usize; ws.g.num_nodes()]; ExpertKind::ALL.len()];
    let mut evaluated = vec![0usize; ws.g.num_nodes()];
    for (e, (_, outcomes)) in done.iter().enumerate() {
        for (out, split) in outcomes.iter().zip(&ws.splits) {
            let logits = out.model.predict(&ops, &ws.g.features)?.logits;
            for &i in &split.test {
                if e == 0 {
                    evaluated[i] += 1;
                }
                if logits.row_argmax(i) == ws.g.labels[i] {
                    correct[e][i] += 1;
                }
            }
        }
    }

    let mut csv = String::from(SUBSPACES_HEADER);
    for h in 0..profile.homophily_bins {
        for d in 0..profile.degree_bins {
            let members = profile.members(h, d);
            let tests: usize = members.iter().map(|&i| evaluated[i]).sum();
            let (h_lo, h_hi) = profile.homophily_bounds(h);
            let (d_lo, d_hi) = profile.degree_bounds(d);
            let mut fields = vec![
                h.to_string(),
                h_lo.to_string(),
                h_hi.to_string(),
                d.to_string(),
                d_lo.to_string(),
                d_hi.to_string(),
                members.len().to_string(),
                tests.to_string(),
            ];
            if tests == 0 {
                fields.extend(std::iter::repeat_n(String::new(), ExpertKind::ALL.len() + 1));
            } else {
                let accs: Vec<f64> = correct
                    .iter()
                    .map(|c| members.iter().map(|&i| c[i]).sum::<usize>() as f64 / tests as f64)
                    .collect();
                let mut winner = 0;
                for (e, &a) in accs.iter().enumerate() {
                    if a > accs[winner] {
                        winner = e;
                    }
                }
                fields.extend(accs.iter().map(f64::to_string));
                fields.push(ExpertKind::ALL[winner].to_string());
            }
            csv.push_str(&fields.join(","));
            csv.push('\n');
        }
    }
    manifest.emit("subspaces.csv", csv.as_bytes())?;
    manifest.finish()?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_verify_theory(cmd: &TheoryCmd) -> Result<ExitCode> {
    let cfg = TheoryConfig {
        instances: cmd.instances,
        corollary_instances: cmd.corollary_instances,
        lambda_points: cmd.lambda_points,
        grid_resolution: cmd.grid_resolution,
        seed: cmd.seed,
    };
    let mut manifest = RunManifest::start("verify-theory", serde_json::to_value(cfg)?, None, &[cmd.seed], &cmd.out)?;
    let report = run_theory_suite(&cfg)?;
    manifest.emit_json("theory_report.json", &report)?;
    manifest.finish()?;
    eprintln!(
        "closed form {}/{} within {CLOSED_FORM_TOLERANCE:e} (max L1 gap {:.3e}); softmax gap {:.3e}; sharpening violations {}; corollary violations {}/{}",
        report.closed_form_matches,
        report.closed_form.len(),
        report.max_l1_gap,
        report.max_softmax_gap,
        report.sharpening_violations,
        report.corollary.violations,
        report.corollary.checks
    );
    if report.passed() {
        return Ok(ExitCode::SUCCESS);
    }
    for c in &report.closed_form {
        if c.l1_gap > CLOSED_FORM_TOLERANCE || c.softmax_gap > SOFTMAX_TOLERANCE {
            eprintln!("failing closed-form instance: {}", serde_json::to_string(c)?);
        }
    }
    for s in report.sharpening.iter().filter(|s| !s.passed()) {
        eprintln!("failing sharpening instance: {}", serde_json::to_string(s)?);
    }
    for c in &report.corollary.failing {
        eprintln!("failing corollary case: {}", serde_json::to_string(c)?);
    }
    Ok(ExitCode::FAILURE)
}

pub const ROUTING_COMPARE_HEADER: &str = "run,lambda,block,expert,mean_weight\n";

/// Per-block mean routing weight of each run, averaged over its seeds.
pub fn cmd_export_routing(cmd: &ExportCmd) -> Result<ExitCode> {
    let mut runs = Vec::with_capacity(cmd.runs.len());
    for dir in &cmd.runs {
        if !dir.is_dir() {
            bail!("run directory {} does not exist", dir.display());
        }
        let m = RunManifest::read(dir)?;
        if !m.complete {
            bail!("run {} did not complete", dir.display());
        }
        let lambda = m.config.get("lambda").and_then(|l| l.as_f64()).with_context(|| {
            format!("run {} has no single lambda; export expects a train run", dir.display())
        })?;
        let path = dir.join("routing.csv");
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        runs.push((run_label(dir), lambda, parse_routing_csv(&text)?));
    }
    let mut manifest = RunManifest::start(
        "export-routing",
        json!({ "runs": cmd.runs }),
        None,
        &[],
        &cmd.out,
    )?;
    let mut csv = String::from(ROUTING_COMPARE_HEADER);
    for (label, lambda, rows) in &runs {
        let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for r in rows {
            let e = sums.entry((r.block, r.expert.index())).or_insert((0.0, 0));
            e.0 += r.mean_weight;
            e.1 += 1;
        }
        for ((block, e), (sum, n)) in sums {
            csv.push_str(&format!("{label},{lambda},{block},{},{}\n", ExpertKind::ALL[e], sum / n as f64));
        }
    }
    manifest.emit("routing_compare.csv", csv.as_bytes())?;
    manifest.finish()?;
    Ok(ExitCode::SUCCESS)
}

fn run_label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()).replace(',', "_")
}

pub fn cmd_generate_sbm(cmd: &SbmCmd) -> Result<ExitCode> {
    let params = SbmParams {
        nodes: cmd.nodes,
        classes: cmd.classes,
        p_in: cmd.p_in,
        p_out: cmd.p_out,
        feature_dim: cmd.features,
        noise: cmd.noise,
    };
    let mut rng = RngState::new(cmd.seed);
    let g = match cmd.assortative {
        None => generate_sbm(&params, &mut rng)?,
        Some(a) => {
            if a > cmd.classes {
                bail!("--assortative {a} exceeds --classes {}", cmd.classes);
            }
            let blocks = mixed_block_matrix(cmd.classes, a, cmd.p_in, cmd.p_out);
            let name = format!("sbm-mixed-n{}-c{}-a{a}-pin{}-pout{}", cmd.nodes, cmd.classes, cmd.p_in, cmd.p_out);
            generate_sbm_blocks(name, cmd.nodes, &blocks, cmd.features, cmd.noise, &mut rng)?
        }
    };
    let mut manifest = RunManifest::start(
        "generate-sbm",
        json!({
            "nodes": cmd.nodes, "classes": cmd.classes, "p_in": cmd.p_in, "p_out": cmd.p_out,
            "features": cmd.features, "noise": cmd.noise, "assortative": cmd.assortative,
        }),
        Some(DatasetFingerprint::of(&g)),
        &[cmd.seed],
        &cmd.out,
    )?;
    save_dataset(&g, &cmd.out)?;
    for f in ["meta.json", "edges.tsv", "features.bin", "labels.tsv"] {
        manifest.record(f);
    }
    eprintln!("{}: {} nodes, {} edges", g.name, g.num_nodes(), g.num_edges());
    manifest.finish()?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::Full].into_iter().chain(ABLATIONS) {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("no-such".parse::<Variant>().is_err());
    }

    #[test]
    fn no_route_loss_is_lambda_zero() {
        let base = TrainConfig::default();
        let a = Variant::NoRouteLoss.apply(base, DEFAULT_DELTA_TAU);
        let b = Variant::Full.apply(TrainConfig { lambda: 0.0, ..base }, DEFAULT_DELTA_TAU);
        assert_eq!(a, b);
    }

    #[test]
    fn each_ablation_changes_exactly_its_setting() {
        let base = TrainConfig::default();
        assert_eq!(Variant::NoSr.apply(base, 1.0).model.router, RouterKind::Mean);
        assert!(!Variant::NoEffn.apply(base, 1.0).model.use_effn);
        assert!(!Variant::NoAres.apply(base, 1.0).model.adaptive_residual);
        let dt = Variant::DeltaTau.apply(base, 0.3);
        assert_eq!((dt.lambda, dt.model.temperature), (0.0, 0.3));
        assert_eq!(Variant::Full.apply(base, 0.3), base);
    }
}
