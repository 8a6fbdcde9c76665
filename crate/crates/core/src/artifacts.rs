//! Files written by the commands. Every artifact carries the config hash,
//! run seed and tool version: JSON files in a `meta` object, CSV files in a
//! leading `#` line and DOT files in a leading `//` comment. Contents depend
//! only on the inputs, so reruns reproduce them byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Comparison, ExperimentRecord};
use crate::space::{CellSpec, Genotype, NUM_INPUT_NODES};
use crate::stages::{MetricsRow, SearchCheckpoint};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Checkpoint container format tag.
pub const CHECKPOINT_FORMAT: &str = "dots-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

impl ArtifactMeta {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        ArtifactMeta {
            config_hash: config_hash.into(),
            seed,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    fn comment(&self) -> String {
        format!(
            "config_hash={} seed={} tool_version={}",
            self.config_hash, self.seed, self.tool_version
        )
    }

    /// Record provenance in the genotype's metadata.
    pub fn stamp(&self, genotype: &mut Genotype) {
        let meta = genotype.meta_mut();
        meta.config_hash = Some(self.config_hash.clone());
        meta.seed = Some(self.seed);
        meta.tool_version = Some(self.tool_version.clone());
    }
}

/// Write `text`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn csv_text(meta: &ArtifactMeta, header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(format!(
        "# {}\n{}",
        meta.comment(),
        String::from_utf8(body).expect("csv of utf-8 fields")
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-epoch metrics, one `max_beta_<node>` column per intermediate node.
pub fn metrics_csv(meta: &ArtifactMeta, cell: &CellSpec, rows: &[MetricsRow]) -> Result<String> {
    let mut header: Vec<String> = [
        "epoch", "stage", "loss", "val_loss", "lr_w", "lr_arch", "t_beta", "t_alpha",
    ]
    .map(String::from)
    .to_vec();
    header.extend(cell.intermediate_nodes().map(|j| format!("max_beta_{j}")));
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.epoch.to_string(),
                r.stage.clone(),
                r.loss.to_string(),
                opt(r.val_loss),
                r.lr_w.to_string(),
                r.lr_arch.to_string(),
                opt(r.t_beta),
                opt(r.t_alpha),
            ];
            row.extend((0..cell.intermediate_nodes).map(|k| opt(r.max_beta.get(k).copied())));
            row
        })
        .collect();
    csv_text(meta, &header, &rows)
}

/// Experiment table: one row per combination of the studied node.
pub fn rank_csv(meta: &ArtifactMeta, records: &[ExperimentRecord]) -> Result<String> {
    let header = [
        "combination_id",
        "code",
        "acc_mean",
        "acc_std",
        "score_op",
        "score_combo",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.combination_id.to_string(),
                r.code.clone(),
                r.acc_mean.to_string(),
                r.acc_std.to_string(),
                r.score_op.to_string(),
                r.score_combo.to_string(),
            ]
        })
        .collect();
    csv_text(meta, &header, &rows)
}

/// `"ok"`, or `"no-signal"` when tau is undefined because one ranking is constant.
pub fn tau_status(tau: Option<f64>) -> &'static str {
    if tau.is_some() {
        "ok"
    } else {
        "no-signal"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub meta: ArtifactMeta,
    pub node: usize,
    pub combinations: usize,
    /// Topology parameterisation behind `score_combo`.
    pub baseline: String,
    pub tau_op: Option<f64>,
    pub tau_combo: Option<f64>,
    pub status_op: String,
    pub status_combo: String,
    pub train_seeds: Vec<u64>,
    pub comparisons: Vec<Comparison>,
    pub base_genotype: Genotype,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ArtifactMeta,
    pub genotype: Genotype,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub acc_mean: f64,
    pub acc_std: f64,
}

/// On-disk checkpoint: a tagged JSON container around the search state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub meta: ArtifactMeta,
    pub checkpoint: SearchCheckpoint,
}

pub fn save_checkpoint(
    path: &Path,
    meta: &ArtifactMeta,
    checkpoint: &SearchCheckpoint,
) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        meta: meta.clone(),
        checkpoint: checkpoint.clone(),
    };
    write_text(path, &serde_json::to_string(&file)?)
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format `{}`",
            path.display(),
            file.format
        )));
    }
    Ok(file)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz rendering of a cell. Inputs are `in_1`/`in_2`, intermediate
/// node `k` is `c_k`, and every intermediate node feeds `out`.
pub fn genotype_dot(genotype: &Genotype, meta: Option<&ArtifactMeta>) -> String {
    let mut s = String::new();
    if let Some(m) = meta {
        let _ = writeln!(s, "// {}", m.comment());
    }
    s.push_str("digraph cell {\n  rankdir=LR;\n  node [shape=box, style=rounded];\n");
    for i in 1..=NUM_INPUT_NODES {
        let _ = writeln!(s, "  in_{i} [label={}];", quote(&format!("input {i}")));
    }
    let mut nodes: Vec<_> = genotype.nodes.iter().collect();
    nodes.sort_by_key(|n| n.node);
    for n in &nodes {
        let _ = writeln!(
            s,
            "  c_{} [label={}];",
            n.node,
            quote(&format!("node {}", n.node))
        );
    }
    s.push_str("  out [label=\"output\"];\n");
    let name = |i: usize| {
        if i <= NUM_INPUT_NODES {
            format!("in_{i}")
        } else {
            format!("c_{i}")
        }
    };
    for n in &nodes {
        let mut edges = n.edges.clone();
        edges.sort_by_key(|e| e.from);
        for e in edges {
            let _ = writeln!(
                s,
                "  {} -> c_{} [label={}];",
                name(e.from),
                n.node,
                quote(e.op.name())
            );
        }
    }
    for n in &nodes {
        let _ = writeln!(s, "  c_{} -> out [style=dashed];", n.node);
    }
    s.push_str("}\n");
    s
}
