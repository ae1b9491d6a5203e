//! On-disk dataset directory:
//!
//! ```text
//! meta.json     {"name", "num_nodes", "num_features", "num_classes"}
//! edges.tsv     "u\tv" per undirected edge, 0-based
//! features.bin  "GMXF" | rows u32 LE | cols u32 LE | 0u32 | rows*cols f32 LE
//! labels.tsv    one class id per line, line i = node i
//! splits.json   optional {"<seed>": {"train": [..], "val": [..], "test": [..]}}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GraphDataset, SplitSpec};
use crate::error::{GnnMoeError, Result};
use crate::tensor::DenseMatrix;

pub const FEATURES_MAGIC: &[u8; 4] = b"GMXF";
const HEADER_LEN: usize = 16;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    name: String,
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitLists {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(GnnMoeError::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| GnnMoeError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|e| format_err(path, e.to_string()))
}

fn format_err(path: &Path, detail: impl Into<String>) -> GnnMoeError {
    GnnMoeError::Format {
        file: path.display().to_string(),
        detail: detail.into(),
    }
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| GnnMoeError::io(path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| format_err(&meta_path, e.to_string()))?;

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (lineno, line) in read_text(&edges_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| format_err(&edges_path, format!("line {}: expected two node ids", lineno + 1)))
        };
        let (u, v) = (parse(parts.next())?, parse(parts.next())?);
        if parts.next().is_some() {
            return Err(format_err(&edges_path, format!("line {}: extra columns", lineno + 1)));
        }
        edges.push((u, v));
    }

    let features_path = dir.join("features.bin");
    let bytes = read(&features_path)?;
    if bytes.len() < HEADER_LEN || &bytes[0..4] != FEATURES_MAGIC {
        return Err(format_err(&features_path, "missing GMXF header"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (rows, cols, reserved) = (word(1), word(2), word(3));
    if reserved != 0 {
        return Err(format_err(&features_path, "reserved header word must be zero"));
    }
    if rows != meta.num_nodes || cols != meta.num_features {
        return Err(GnnMoeError::dim(
            "load_dataset features.bin",
            format!("{}x{} from meta.json", meta.num_nodes, meta.num_features),
            format!("{rows}x{cols}"),
        ));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * cols * 4 {
        return Err(format_err(&features_path, format!("expected {} payload bytes, found {}", rows * cols * 4, body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let features = DenseMatrix::from_vec(rows, cols, data)?;

    let labels_path = dir.join("labels.tsv");
    let labels: Vec<usize> = read_text(&labels_path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| format_err(&labels_path, format!("line {}: not a class id", i + 1)))
        })
        .collect::<Result<_>>()?;
    if labels.len() != meta.num_nodes {
        return Err(GnnMoeError::dim("load_dataset labels.tsv", meta.num_nodes, labels.len()));
    }

    GraphDataset::new(meta.name, meta.num_classes, &edges, features, labels)
}

/// Writes the four mandatory files. Features are narrowed to `f32`.
pub fn save_dataset(g: &GraphDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| GnnMoeError::io(dir, e))?;
    let meta = Meta {
        name: g.name.clone(),
        num_nodes: g.num_nodes(),
        num_features: g.num_features(),
        num_classes: g.num_classes,
    };
    write(dir.join("meta.json"), serde_json::to_string(&meta)?.as_bytes())?;

    let mut edges = String::new();
    for (u, v) in g.edge_list() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write(dir.join("edges.tsv"), edges.as_bytes())?;

    let mut bin = Vec::with_capacity(HEADER_LEN + g.features.len() * 4);
    bin.extend_from_slice(FEATURES_MAGIC);
    bin.extend_from_slice(&(g.num_nodes() as u32).to_le_bytes());
    bin.extend_from_slice(&(g.num_features() as u32).to_le_bytes());
    bin.extend_from_slice(&0u32.to_le_bytes());
    for &x in g.features.data() {
        bin.extend_from_slice(&(x as f32).to_le_bytes());
    }
    write(dir.join("features.bin"), &bin)?;

    let labels: String = g.labels.iter().map(|c| format!("{c}\n")).collect();
    write(dir.join("labels.tsv"), labels.as_bytes())
}

/// Reads the split stored for `seed` in `splits.json`, if the file exists
/// and has an entry for it.
pub fn load_splits(dir: impl AsRef<Path>, seed: u64, num_nodes: usize) -> Result<Option<SplitSpec>> {
    let path = dir.as_ref().join("splits.json");
    if !path.exists() {
        return Ok(None);
    }
    let all: BTreeMap<String, SplitLists> =
        serde_json::from_str(&read_text(&path)?).map_err(|e| format_err(&path, e.to_string()))?;
    let Some(lists) = all.get(&seed.to_string()) else {
        return Ok(None);
    };
    let spec = SplitSpec {
        train: lists.train.clone(),
        val: lists.val.clone(),
        test: lists.test.clone(),
        seed,
    };
    spec.validate(num_nodes).map_err(|e| format_err(&path, e.to_string()))?;
    Ok(Some(spec))
}

pub fn save_splits(dir: impl AsRef<Path>, splits: &[SplitSpec]) -> Result<()> {
    let all: BTreeMap<String, SplitLists> = splits
        .iter()
        .map(|s| {
            (
                s.seed.to_string(),
                SplitLists {
                    train: s.train.clone(),
                    val: s.val.clone(),
                    test: s.test.clone(),
                },
            )
        })
        .collect();
    write(dir.as_ref().join("splits.json"), serde_json::to_string(&all)?.as_bytes())
}
