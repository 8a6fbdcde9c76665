//! Run configuration: a single TOML document whose sections mirror the
//! configuration types. Unknown keys anywhere are errors.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/example"
//!
//! [network]
//! intermediate_nodes = 4
//! channels = 8
//!
//! [plan]
//! op_epochs = 30
//! topo_epochs = 40
//! strategy = "darts_top1"
//! policy = "pairwise"
//! t0 = 10.0
//! t_final = 0.02
//! ```
//!
//! Missing sections and keys take their defaults; `dots validate --config`
//! prints the fully resolved document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{RankPlan, TaskConfig, TrainConfig};
use crate::space::{CellSpec, OperationSet};
use crate::stages::{OptimizerConfig, SearchSetup, StagePlan};
use crate::supernet::NetworkShape;

/// Shape of the searched cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub intermediate_nodes: usize,
    /// Channels of the search supernet; stand-alone training uses `train.channels`.
    pub channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            intermediate_nodes: 4,
            channels: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Stand-alone trainings per evaluated genotype.
    pub seeds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seeds: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every derived seed except the task generator's.
    pub seed: u64,
    /// Artifact directory; not part of the config hash.
    pub out_dir: Option<PathBuf>,
    pub task: TaskConfig,
    pub network: NetworkConfig,
    pub plan: StagePlan,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub rankcorr: RankPlan,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse `path`; a relative `plan.external_ops` is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let (Some(ext), Some(dir)) = (&cfg.plan.external_ops, path.parent()) {
            if ext.is_relative() {
                cfg.plan.external_ops = Some(dir.join(ext));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.plan.validate()?;
        self.optimizer.validate()?;
        self.train.validate()?;
        self.cell()?;
        if self.network.channels == 0 {
            return Err(Error::Config("network.channels must be positive".into()));
        }
        if self.rankcorr.train_seeds == 0 {
            return Err(Error::Config(
                "rankcorr.train_seeds must be positive".into(),
            ));
        }
        if self.eval.seeds == 0 {
            return Err(Error::Config("eval.seeds must be positive".into()));
        }
        Ok(())
    }

    pub fn cell(&self) -> Result<CellSpec> {
        CellSpec::new(self.network.intermediate_nodes, self.network.channels)
            .map_err(|e| Error::Config(format!("network: {e}")))
    }

    pub fn search_setup(&self) -> Result<SearchSetup> {
        Ok(SearchSetup {
            shape: NetworkShape {
                cell: self.cell()?,
                input_channels: self.task.channels,
                classes: self.task.classes,
            },
            ops: OperationSet::canonical(),
            plan: self.plan.clone(),
            optim: self.optimizer.clone(),
            seed: self.seed,
        })
    }

    /// Hex SHA-256 of the canonical JSON form, without `out_dir`.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = RunConfig {
            out_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}
