//! Run manifests, result rows and the CSV/JSON writers shared by every
//! command.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::experts::ExpertKind;
use crate::graph::GraphDataset;
use crate::routing::RoutingRecord;
use crate::train::{TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub name: String,
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
}

impl DatasetFingerprint {
    pub fn of(g: &GraphDataset) -> Self {
        DatasetFingerprint {
            name: g.name.clone(),
            nodes: g.num_nodes(),
            edges: g.num_edges(),
            features: g.num_features(),
            classes: g.num_classes,
        }
    }
}

/// Written before a command does any work and rewritten on completion with
/// the list of files produced. The timestamp is the only field that varies
/// between identical invocations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub dataset: Option<DatasetFingerprint>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub timestamp_unix: u64,
    pub complete: bool,
    /// Paths relative to `out_dir`.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn start(
        command: &str,
        config: serde_json::Value,
        dataset: Option<DatasetFingerprint>,
        seeds: &[u64],
        out_dir: &Path,
    ) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            dataset,
            seeds: seeds.to_vec(),
            out_dir: out_dir.to_path_buf(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            complete: false,
            outputs: Vec::new(),
        };
        manifest.write()?;
        Ok(manifest)
    }

    fn write(&self) -> Result<()> {
        write_json(&self.out_dir.join("manifest.json"), self)
    }

    /// Writes `contents` under the output directory and records it.
    pub fn emit(&mut self, relative: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
        let relative = relative.as_ref();
        let path = self.out_dir.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(relative.to_string_lossy().replace('\\', "/"));
        Ok(())
    }

    /// Records a file some other writer already placed under `out_dir`.
    pub fn record(&mut self, relative: impl AsRef<Path>) {
        self.outputs.push(relative.as_ref().to_string_lossy().replace('\\', "/"));
    }

    pub fn emit_json<T: Serialize>(&mut self, relative: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.emit(relative, text.as_bytes())
    }

    pub fn finish(mut self) -> Result<()> {
        self.complete = true;
        self.write()
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub variant: String,
    pub seed: u64,
    pub test_acc: f64,
    pub val_acc: f64,
    pub train_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Mean routing entropy per block of the selected model.
    pub routing_entropy: Vec<f64>,
}

impl ResultRow {
    pub fn new(dataset: &str, variant: &str, seed: u64, outcome: &TrainOutcome) -> Self {
        ResultRow {
            dataset: dataset.to_string(),
            variant: variant.to_string(),
            seed,
            test_acc: outcome.test_acc,
            val_acc: outcome.val_acc,
            train_acc: outcome.train_acc,
            best_epoch: outcome.history.best_epoch,
            epochs_run: outcome.history.epochs.len(),
            routing_entropy: outcome.routing_entropy(),
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub dataset: String,
    pub variant: String,
    pub config: TrainConfig,
    pub mean_test_acc: f64,
    /// Population standard deviation over seeds.
    pub std_test_acc: f64,
    pub mean_val_acc: f64,
    pub std_val_acc: f64,
    /// Per block, averaged over seeds.
    pub mean_routing_entropy: Vec<f64>,
    pub rows: Vec<ResultRow>,
}

impl VariantSummary {
    pub fn new(dataset: &str, variant: &str, config: TrainConfig, rows: Vec<ResultRow>) -> Self {
        let tests: Vec<f64> = rows.iter().map(|r| r.test_acc).collect();
        let vals: Vec<f64> = rows.iter().map(|r| r.val_acc).collect();
        let (mean_test_acc, std_test_acc) = mean_std(&tests);
        let (mean_val_acc, std_val_acc) = mean_std(&vals);
        let blocks = rows.first().map_or(0, |r| r.routing_entropy.len());
        let mean_routing_entropy = (0..blocks)
            .map(|b| mean_std(&rows.iter().map(|r| r.routing_entropy[b]).collect::<Vec<_>>()).0)
            .collect();
        VariantSummary {
            dataset: dataset.to_string(),
            variant: variant.to_string(),
            config,
            mean_test_acc,
            std_test_acc,
            mean_val_acc,
            std_val_acc,
            mean_routing_entropy,
            rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiVariantResults {
    pub dataset: String,
    pub variants: Vec<VariantSummary>,
}

pub const ROUTING_HEADER: &str = "seed,block,expert,mean_weight\n";

/// `seed,block,expert,mean_weight` rows for one seed.
pub fn routing_rows(seed: u64, records: &[RoutingRecord]) -> String {
    let mut out = String::new();
    for r in records {
        for (e, w) in r.mean_weights().iter().enumerate() {
            out.push_str(&format!("{seed},{},{},{w}\n", r.block, ExpertKind::ALL[e]));
        }
    }
    out
}

/// Parsed `routing.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingRow {
    pub seed: u64,
    pub block: usize,
    pub expert: ExpertKind,
    pub mean_weight: f64,
}

pub fn parse_routing_csv(text: &str) -> Result<Vec<RoutingRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        anyhow::ensure!(f.len() == 4, "routing.csv line {}: expected 4 fields", i + 1);
        rows.push(RoutingRow {
            seed: f[0].parse().with_context(|| format!("routing.csv line {}", i + 1))?,
            block: f[1].parse().with_context(|| format!("routing.csv line {}", i + 1))?,
            expert: f[2].parse()?,
            mean_weight: f[3].parse().with_context(|| format!("routing.csv line {}", i + 1))?,
        });
    }
    Ok(rows)
}
