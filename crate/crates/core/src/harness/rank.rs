//! Rank correlation between importance scores and stand-alone accuracy.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::task::SyntheticTask;
use super::train::{train_standalone, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::space::{Genotype, GenotypeEdge, OpKind, TopologySpace};
use crate::stages::{CombinationScore, SearchCheckpoint, SearchOutcome, SearchRun, SearchSetup};

/// Largest space trained exhaustively.
pub const MAX_BRUTE_FORCE: usize = 64;

/// One genotype per combination of `space`: node `space.node` takes the
/// combination's predecessors, each carrying `edge_op(predecessor)`; every
/// other node is copied from `base`.
pub fn enumerate_variants(
    space: &TopologySpace,
    base: &Genotype,
    edge_op: impl Fn(usize) -> OpKind,
) -> Result<Vec<Genotype>> {
    if space.len() > MAX_BRUTE_FORCE {
        return Err(Error::invalid(format!(
            "node {} has {} combinations, more than the {MAX_BRUTE_FORCE} trained exhaustively; sample a subset instead",
            space.node,
            space.len()
        )));
    }
    if base.node(space.node).is_none() {
        return Err(Error::invalid(format!(
            "base genotype has no node {}",
            space.node
        )));
    }
    Ok(space
        .combinations
        .iter()
        .map(|c| {
            let mut g = base.clone();
            g.meta = None;
            g.policy = space.policy;
            let node = g.node_mut(space.node).expect("checked above");
            node.edges = c
                .predecessors()
                .into_iter()
                .map(|from| GenotypeEdge {
                    from,
                    op: edge_op(from),
                })
                .collect();
            node.dropped.clear();
            g
        })
        .collect())
}

/// Kendall's tau-b. Pairs tied in either list count as neither concordant
/// nor discordant and the denominator is corrected for ties; `None` when
/// one list is constant, where the coefficient is undefined.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "rank lists differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("kendall tau needs at least two items"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "kendall_tau" });
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = a[i].total_cmp(&a[j]);
            let db = b[i].total_cmp(&b[j]);
            match (da.is_eq(), db.is_eq()) {
                (true, true) => {
                    ties_a += 1;
                    ties_b += 1;
                }
                (true, false) => ties_a += 1,
                (false, true) => ties_b += 1,
                (false, false) if da == db => concordant += 1,
                (false, false) => discordant += 1,
            }
        }
    }
    let n0 = (a.len() * (a.len() - 1) / 2) as i64;
    let denom = ((n0 - ties_a) as f64 * (n0 - ties_b) as f64).sqrt();
    if denom == 0.0 {
        return Ok(None);
    }
    Ok(Some((concordant - discordant) as f64 / denom))
}

/// Stable key of a stand-alone training: architecture, task, schedule and seed.
pub fn training_key(
    genotype: &Genotype,
    task: &SyntheticTask,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<String> {
    let arch = Genotype {
        meta: None,
        ..genotype.clone()
    };
    let payload = serde_json::to_string(&(&arch, &task.config, cfg, seed))?;
    Ok(hex::encode(Sha256::digest(payload.as_bytes())))
}

/// Stable key of a search: setup and task.
pub fn search_key(setup: &SearchSetup, task: &SyntheticTask) -> Result<String> {
    let payload = serde_json::to_string(&(setup, &task.config))?;
    Ok(hex::encode(Sha256::digest(payload.as_bytes())))
}

/// Stand-alone accuracies keyed by [`training_key`] and finished searches
/// keyed by [`search_key`], so a rerun repeats no training.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExperimentCache {
    entries: BTreeMap<String, f64>,
    #[serde(default)]
    searches: BTreeMap<String, SearchCheckpoint>,
    #[serde(skip)]
    hits: usize,
    #[serde(skip)]
    misses: usize,
}

impl ExperimentCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cached accuracy, or train and remember it.
    pub fn accuracy(
        &mut self,
        genotype: &Genotype,
        task: &SyntheticTask,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<f64> {
        let key = training_key(genotype, task, cfg, seed)?;
        if let Some(&acc) = self.entries.get(&key) {
            self.hits += 1;
            return Ok(acc);
        }
        let acc = train_standalone(genotype, task, cfg, seed)?;
        self.misses += 1;
        self.entries.insert(key, acc);
        Ok(acc)
    }

    /// Cached finished search for `setup`, or run `make` to completion and remember it.
    pub fn search(
        &mut self,
        setup: &SearchSetup,
        task: &SyntheticTask,
        make: impl FnOnce() -> Result<SearchRun>,
    ) -> Result<SearchRun> {
        let key = search_key(setup, task)?;
        if let Some(cp) = self.searches.get(&key) {
            let run = SearchRun::resume(cp.clone(), task.train.clone())?;
            if run.is_finished() {
                return Ok(run);
            }
        }
        let mut run = make()?;
        while !run.is_finished() {
            run.step_epoch()?;
        }
        self.searches.insert(key, run.checkpoint());
        Ok(run)
    }

    /// Number of cached accuracies.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(hits, trainings)` of stand-alone accuracies since creation or load.
    pub fn stats(&self) -> (usize, usize) {
        (self.hits, self.misses)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Empty cache when `path` does not exist yet.
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Genotype whose other nodes stay fixed while the studied node varies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseCell {
    /// Derived from the operation weights alone, so every topology
    /// parameterisation is scored against the same ground truth.
    #[default]
    Darts,
    /// Derived by the topology search.
    Dots,
}

/// Settings of one rank-correlation experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankPlan {
    /// Node whose edge combinations are enumerated; the last node when unset.
    pub node: Option<usize>,
    /// Stand-alone trainings averaged per variant.
    pub train_seeds: usize,
    pub base: BaseCell,
    /// Further topology parameterisations scored against the same variants.
    pub compare: Vec<String>,
}

impl Default for RankPlan {
    fn default() -> Self {
        RankPlan {
            node: None,
            train_seeds: 3,
            base: BaseCell::Darts,
            compare: Vec::new(),
        }
    }
}

/// One row of the experiment table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub combination_id: usize,
    pub code: String,
    pub label: String,
    pub accuracies: Vec<f64>,
    pub acc_mean: f64,
    pub acc_std: f64,
    /// Operation-derived importance (sum of edge importances).
    pub score_op: f64,
    /// Order-equivalent combination score from the topology search.
    pub score_combo: f64,
}

/// Combination scores of one topology parameterisation and their tau.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub scores: Vec<f64>,
    pub tau: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RankOutcome {
    pub node: usize,
    pub records: Vec<ExperimentRecord>,
    pub tau_op: Option<f64>,
    pub tau_combo: Option<f64>,
    /// One entry per `RankPlan::compare` name, searched from the same
    /// operation stage.
    pub comparisons: Vec<Comparison>,
    pub train_seeds: Vec<u64>,
    pub base: Genotype,
    pub search: SearchOutcome,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Heaviest retained candidate of every edge entering `node`.
fn retained_ops(search: &SearchOutcome, node: usize) -> BTreeMap<usize, OpKind> {
    search
        .retained
        .iter()
        .filter(|(e, _)| e.to == node)
        .filter_map(|(e, ops)| {
            ops.iter()
                .copied()
                .filter(|(op, _)| *op != OpKind::Zero)
                .fold(None, |best: Option<(OpKind, f64)>, (op, w)| match best {
                    Some((_, bw)) if bw >= w => best,
                    _ => Some((op, w)),
                })
                .map(|(op, _)| (e.from, op))
        })
        .collect()
}

fn combo_scores(search: &SearchOutcome, node: usize) -> Result<Vec<CombinationScore>> {
    Ok(search
        .importance
        .node(node)
        .ok_or_else(|| Error::invalid(format!("no importance scores for node {node}")))?
        .scores
        .clone())
}

fn rank_scores(scores: &[CombinationScore]) -> Result<Vec<f64>> {
    scores
        .iter()
        .map(|s| {
            s.combo_rank_score
                .ok_or_else(|| Error::invalid("topology search produced no combination scores"))
        })
        .collect()
}

/// Search on the task, then train every variant of the studied node and
/// correlate both importance scores with the mean stand-alone accuracy.
pub fn rank_experiment(
    task: &SyntheticTask,
    setup: SearchSetup,
    plan: &RankPlan,
    train: &TrainConfig,
    cache: &mut ExperimentCache,
) -> Result<RankOutcome> {
    if plan.train_seeds == 0 {
        return Err(Error::Config(
            "rankcorr.train_seeds must be positive".into(),
        ));
    }
    let cell = setup.shape.cell;
    let node = plan.node.unwrap_or(cell.last_node());
    if !cell.is_intermediate(node) {
        return Err(Error::Config(format!(
            "rankcorr.node {node} is not an intermediate node"
        )));
    }
    let seed = setup.seed;
    let run = cache.search(&setup, task, || {
        SearchRun::new(setup.clone(), task.train.clone())
    })?;
    let search = run.outcome()?;
    let mut forks = Vec::with_capacity(plan.compare.len());
    for name in &plan.compare {
        let mut fork_setup = setup.clone();
        fork_setup.plan.baseline = name.clone();
        forks.push(
            cache
                .search(&fork_setup, task, || run.fork_topology(name))?
                .outcome()?,
        );
    }
    let base = match plan.base {
        BaseCell::Darts => search
            .darts_genotype
            .clone()
            .ok_or_else(|| Error::invalid("the darts base cell needs an operation search"))?,
        BaseCell::Dots => search.genotype.clone(),
    };
    let slot = node - cell.first_intermediate();
    let space = &search.topology.spaces[slot];
    let ops = retained_ops(&search, node);
    let variants = enumerate_variants(space, &base, |from| {
        ops.get(&from).copied().unwrap_or(OpKind::SkipConnect)
    })?;
    let scores = combo_scores(&search, node)?;
    let combo = rank_scores(&scores)?;
    let train_seeds: Vec<u64> = (0..plan.train_seeds as u64)
        .map(|k| derive_seed(seed, "standalone", k))
        .collect();
    let mut records = Vec::with_capacity(variants.len());
    for ((g, s), &score_combo) in variants.iter().zip(&scores).zip(&combo) {
        let accuracies = train_seeds
            .iter()
            .map(|&ts| cache.accuracy(g, task, train, ts))
            .collect::<Result<Vec<_>>>()?;
        let (acc_mean, acc_std) = mean_std(&accuracies);
        records.push(ExperimentRecord {
            combination_id: s.index,
            code: s.code.clone(),
            label: s.label.clone(),
            accuracies,
            acc_mean,
            acc_std,
            score_op: s.op_score,
            score_combo,
        });
    }
    let acc: Vec<f64> = records.iter().map(|r| r.acc_mean).collect();
    let op: Vec<f64> = records.iter().map(|r| r.score_op).collect();
    let comparisons = plan
        .compare
        .iter()
        .zip(forks)
        .map(|(name, fork)| {
            let scores = rank_scores(&combo_scores(&fork, node)?)?;
            Ok(Comparison {
                baseline: name.clone(),
                tau: kendall_tau(&scores, &acc)?,
                scores,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankOutcome {
        node,
        tau_op: kendall_tau(&op, &acc)?,
        tau_combo: kendall_tau(&combo, &acc)?,
        comparisons,
        records,
        train_seeds,
        base,
        search,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_examples() {
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            Some(1.0)
        );
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(),
            Some(-1.0)
        );
        let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 3.0, 4.0])
            .unwrap()
            .unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]).unwrap(),
            None
        );
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn tau_b_tie_correction() {
        // 3 pairs: (0,1) tied in a, (0,2) and (1,2) concordant.
        let t = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0])
            .unwrap()
            .unwrap();
        assert!((t - 2.0 / (2.0f64 * 3.0).sqrt()).abs() < 1e-15);
    }
}
