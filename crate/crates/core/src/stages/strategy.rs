//! Name-keyed registries of operation strategies and topology
//! parameterisations.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::StagePlan;
use crate::error::{Error, Result};
use crate::space::{
    group_partition_v1, group_partition_v2, Edge, OpKind, OperationSet, TopologyPolicy,
    TopologySpace,
};
use crate::supernet::{aggregate_gamma_var, OperationWeights};
use crate::tensor::{argmax, sigmoid, softmax_t, Tape, Var};

/// How the retained candidates of an edge are mixed during topology search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetainedMixing {
    /// Softmax at a fixed temperature of 1.
    Softmax,
    /// Softmax at `T_β / 1000`, annealed with the topology temperature.
    DualTemperature,
}

/// Operation-search strategy: what the first stage searches over and what
/// it hands to the topology stage.
pub trait OperationStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Candidate groups searched on every edge; `None` skips the operation
    /// search entirely.
    fn search_groups(&self, ops: &OperationSet) -> Result<Option<Vec<Vec<OpKind>>>>;

    /// Candidates kept on `edge` after the operation search.
    fn retain(&self, alpha: Option<&OperationWeights>, edge: Edge) -> Result<Vec<OpKind>>;

    /// Mixing of edges that keep more than one candidate.
    fn retained_mixing(&self) -> RetainedMixing {
        RetainedMixing::Softmax
    }
}

fn edge_weights(
    alpha: Option<&OperationWeights>,
    edge: Edge,
) -> Result<(&OperationWeights, usize)> {
    let alpha = alpha.ok_or_else(|| Error::invalid("strategy needs trained operation weights"))?;
    let k = alpha.position(edge).ok_or_else(|| {
        Error::invalid(format!(
            "no operation weights for edge {}-{}",
            edge.from, edge.to
        ))
    })?;
    Ok((alpha, k))
}

/// Non-Zero candidates of `edge` ordered by weight, ties to the earlier candidate.
fn ranked_non_zero(alpha: &OperationWeights, k: usize) -> Result<Vec<(OpKind, f64)>> {
    let mut ops: Vec<(OpKind, f64)> = alpha
        .weighted_ops(k, 1.0)?
        .into_iter()
        .filter(|(op, _)| *op != OpKind::Zero)
        .collect();
    ops.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ops)
}

struct DartsTopK {
    name: &'static str,
    k: usize,
}

impl OperationStrategy for DartsTopK {
    fn name(&self) -> &'static str {
        self.name
    }

    fn search_groups(&self, ops: &OperationSet) -> Result<Option<Vec<Vec<OpKind>>>> {
        Ok(Some(vec![ops.ops().to_vec()]))
    }

    fn retain(&self, alpha: Option<&OperationWeights>, edge: Edge) -> Result<Vec<OpKind>> {
        let (alpha, k) = edge_weights(alpha, edge)?;
        let ranked = ranked_non_zero(alpha, k)?;
        if ranked.is_empty() {
            return Err(Error::invalid(
                "operation set has no candidate besides zero",
            ));
        }
        Ok(ranked.into_iter().take(self.k).map(|(op, _)| op).collect())
    }
}

struct Grouped {
    name: &'static str,
    partition: fn(&OperationSet) -> Result<OperationSet>,
}

impl OperationStrategy for Grouped {
    fn name(&self) -> &'static str {
        self.name
    }

    fn search_groups(&self, ops: &OperationSet) -> Result<Option<Vec<Vec<OpKind>>>> {
        Ok(Some((self.partition)(ops)?.groups()))
    }

    /// Per-group argmax; zero may win its group.
    fn retain(&self, alpha: Option<&OperationWeights>, edge: Edge) -> Result<Vec<OpKind>> {
        let (alpha, k) = edge_weights(alpha, edge)?;
        alpha.edges[k]
            .groups
            .iter()
            .enumerate()
            .map(|(g, ops)| {
                let best = argmax(alpha.logits(k, g)).expect("groups are non-empty");
                Ok(ops[best])
            })
            .collect()
    }

    fn retained_mixing(&self) -> RetainedMixing {
        RetainedMixing::DualTemperature
    }
}

/// Retained candidates injected from a file; no operation search runs.
struct External {
    retained: BTreeMap<(usize, usize), Vec<OpKind>>,
}

/// File read by the `external` strategy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetainedFile {
    pub edges: Vec<RetainedEdge>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetainedEdge {
    pub from: usize,
    pub to: usize,
    pub ops: Vec<OpKind>,
}

impl External {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: RetainedFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut retained = BTreeMap::new();
        for e in file.edges {
            if e.ops.is_empty() {
                return Err(Error::Config(format!(
                    "external edge {}-{} retains no operation",
                    e.from, e.to
                )));
            }
            retained.insert((e.from, e.to), e.ops);
        }
        Ok(External { retained })
    }
}

impl OperationStrategy for External {
    fn name(&self) -> &'static str {
        "external"
    }

    fn search_groups(&self, _ops: &OperationSet) -> Result<Option<Vec<Vec<OpKind>>>> {
        Ok(None)
    }

    fn retain(&self, _alpha: Option<&OperationWeights>, edge: Edge) -> Result<Vec<OpKind>> {
        self.retained
            .get(&(edge.from, edge.to))
            .cloned()
            .ok_or_else(|| {
                Error::Config(format!(
                    "external file has no entry for edge {}-{}",
                    edge.from, edge.to
                ))
            })
    }
}

type StrategyCtor = fn(&StagePlan) -> Result<Box<dyn OperationStrategy>>;

/// Registered operation strategies, in name order.
pub fn operation_strategies() -> BTreeMap<&'static str, StrategyCtor> {
    let mut m: BTreeMap<&'static str, StrategyCtor> = BTreeMap::new();
    m.insert("darts_top1", |_| {
        Ok(Box::new(DartsTopK {
            name: "darts_top1",
            k: 1,
        }))
    });
    m.insert("darts_top2", |_| {
        Ok(Box::new(DartsTopK {
            name: "darts_top2",
            k: 2,
        }))
    });
    m.insert("group_v1", |_| {
        Ok(Box::new(Grouped {
            name: "group_v1",
            partition: group_partition_v1,
        }))
    });
    m.insert("group_v2", |_| {
        Ok(Box::new(Grouped {
            name: "group_v2",
            partition: group_partition_v2,
        }))
    });
    m.insert("external", |plan| {
        let path = plan
            .external_ops
            .as_deref()
            .ok_or_else(|| Error::Config("strategy `external` needs plan.external_ops".into()))?;
        Ok(Box::new(External::load(path)?))
    });
    m
}

pub fn operation_strategy(name: &str, plan: &StagePlan) -> Result<Box<dyn OperationStrategy>> {
    let registry = operation_strategies();
    match registry.get(name) {
        Some(ctor) => ctor(plan),
        None => Err(Error::UnknownStrategy {
            kind: "operation strategy",
            name: name.to_string(),
            known: registry.keys().copied().collect::<Vec<_>>().join(", "),
        }),
    }
}

/// Edges kept for one node, with an optional note for the genotype metadata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSelection {
    /// 1-based predecessors, ascending.
    pub predecessors: Vec<usize>,
    pub warning: Option<String>,
}

/// How a node's incoming edges are weighted and selected during topology search.
pub trait TopologyParameterization: Send + Sync {
    fn name(&self) -> &'static str;

    /// Logits per node.
    fn logit_count(&self, space: &TopologySpace) -> usize;

    /// Whether the logits are read through the annealed temperature.
    fn anneals(&self) -> bool;

    /// Policy recorded in derived genotypes.
    fn derived_policy(&self, plan: TopologyPolicy) -> TopologyPolicy {
        plan
    }

    /// Per-edge weights `γ` on the tape.
    fn edge_weights(
        &self,
        tape: &mut Tape,
        logits: Var,
        space: &TopologySpace,
        t: f64,
    ) -> Result<Var>;

    fn select_edges(&self, logits: &[f64], space: &TopologySpace, t: f64) -> Result<EdgeSelection>;

    /// Reported score of every combination in `space`.
    fn combination_scores(&self, logits: &[f64], space: &TopologySpace, t: f64)
        -> Result<Vec<f64>>;

    /// Scores with the same ordering as [`Self::combination_scores`] that do not
    /// saturate into ties at low temperature.
    fn ranking_scores(&self, logits: &[f64], space: &TopologySpace, t: f64) -> Result<Vec<f64>> {
        self.combination_scores(logits, space, t)
    }
}

/// Edge-combination weights: softmax over combinations, aggregated to edges.
struct Combination;

impl TopologyParameterization for Combination {
    fn name(&self) -> &'static str {
        "none"
    }

    fn logit_count(&self, space: &TopologySpace) -> usize {
        space.len()
    }

    fn anneals(&self) -> bool {
        true
    }

    fn edge_weights(
        &self,
        tape: &mut Tape,
        logits: Var,
        space: &TopologySpace,
        t: f64,
    ) -> Result<Var> {
        let beta = tape.softmax(logits, t)?;
        aggregate_gamma_var(tape, beta, space)
    }

    fn select_edges(
        &self,
        logits: &[f64],
        space: &TopologySpace,
        _t: f64,
    ) -> Result<EdgeSelection> {
        let best = argmax(logits).ok_or_else(|| Error::invalid("empty topology space"))?;
        Ok(EdgeSelection {
            predecessors: space.combinations[best].predecessors(),
            warning: None,
        })
    }

    fn combination_scores(
        &self,
        logits: &[f64],
        _space: &TopologySpace,
        t: f64,
    ) -> Result<Vec<f64>> {
        softmax_t(logits, t)
    }

    /// The logits themselves: softmax is strictly increasing in each logit.
    fn ranking_scores(&self, logits: &[f64], _space: &TopologySpace, _t: f64) -> Result<Vec<f64>> {
        Ok(logits.to_vec())
    }
}

/// Sum of per-edge scores over each combination.
fn summed_edge_scores(edge_scores: &[f64], space: &TopologySpace) -> Vec<f64> {
    space
        .combinations
        .iter()
        .map(|c| c.predecessors().iter().map(|&p| edge_scores[p - 1]).sum())
        .collect()
}

/// Indices of the `k` largest values, ties to the lower index, returned ascending.
pub(crate) fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = idx.into_iter().take(k).collect();
    kept.sort_unstable();
    kept
}

/// One softmax weight per edge, top two kept.
struct EdgeSoftmax;

impl TopologyParameterization for EdgeSoftmax {
    fn name(&self) -> &'static str {
        "pcdarts_edge_weight"
    }

    fn logit_count(&self, space: &TopologySpace) -> usize {
        space.in_degree
    }

    fn anneals(&self) -> bool {
        false
    }

    fn derived_policy(&self, _plan: TopologyPolicy) -> TopologyPolicy {
        TopologyPolicy::Pairwise
    }

    fn edge_weights(
        &self,
        tape: &mut Tape,
        logits: Var,
        _space: &TopologySpace,
        _t: f64,
    ) -> Result<Var> {
        tape.softmax(logits, 1.0)
    }

    fn select_edges(
        &self,
        logits: &[f64],
        _space: &TopologySpace,
        _t: f64,
    ) -> Result<EdgeSelection> {
        let w = softmax_t(logits, 1.0)?;
        Ok(EdgeSelection {
            predecessors: top_k(&w, 2).into_iter().map(|i| i + 1).collect(),
            warning: None,
        })
    }

    fn combination_scores(
        &self,
        logits: &[f64],
        space: &TopologySpace,
        _t: f64,
    ) -> Result<Vec<f64>> {
        Ok(summed_edge_scores(&softmax_t(logits, 1.0)?, space))
    }
}

/// Independent sigmoid gate per edge, binarised at a threshold.
struct EdgeSigmoid {
    threshold: f64,
}

impl TopologyParameterization for EdgeSigmoid {
    fn name(&self) -> &'static str {
        "edge_level_sigmoid"
    }

    fn logit_count(&self, space: &TopologySpace) -> usize {
        space.in_degree
    }

    fn anneals(&self) -> bool {
        false
    }

    fn derived_policy(&self, _plan: TopologyPolicy) -> TopologyPolicy {
        TopologyPolicy::Flexible
    }

    fn edge_weights(
        &self,
        tape: &mut Tape,
        logits: Var,
        _space: &TopologySpace,
        _t: f64,
    ) -> Result<Var> {
        tape.sigmoid(logits)
    }

    fn select_edges(
        &self,
        logits: &[f64],
        space: &TopologySpace,
        _t: f64,
    ) -> Result<EdgeSelection> {
        let kept: Vec<usize> = logits
            .iter()
            .enumerate()
            .filter(|(_, &l)| sigmoid(l) > self.threshold)
            .map(|(i, _)| i + 1)
            .collect();
        if !kept.is_empty() {
            return Ok(EdgeSelection {
                predecessors: kept,
                warning: None,
            });
        }
        let best = argmax(logits).ok_or_else(|| Error::invalid("node without incoming edges"))?;
        Ok(EdgeSelection {
            predecessors: vec![best + 1],
            warning: Some(format!(
                "node {}: no edge gate above {}, kept the strongest edge {}",
                space.node,
                self.threshold,
                best + 1
            )),
        })
    }

    fn combination_scores(
        &self,
        logits: &[f64],
        space: &TopologySpace,
        _t: f64,
    ) -> Result<Vec<f64>> {
        let gates: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
        Ok(summed_edge_scores(&gates, space))
    }
}

type ParameterizationCtor = fn(&StagePlan) -> Box<dyn TopologyParameterization>;

/// Registered topology parameterisations, in name order.
pub fn topology_parameterizations() -> BTreeMap<&'static str, ParameterizationCtor> {
    let mut m: BTreeMap<&'static str, ParameterizationCtor> = BTreeMap::new();
    m.insert("none", |_| Box::new(Combination));
    m.insert("pcdarts_edge_weight", |_| Box::new(EdgeSoftmax));
    m.insert("edge_level_sigmoid", |plan| {
        Box::new(EdgeSigmoid {
            threshold: plan.sigmoid_threshold,
        })
    });
    m
}

pub fn topology_parameterization(
    name: &str,
    plan: &StagePlan,
) -> Result<Box<dyn TopologyParameterization>> {
    let registry = topology_parameterizations();
    match registry.get(name) {
        Some(ctor) => Ok(ctor(plan)),
        None => Err(Error::UnknownStrategy {
            kind: "topology baseline",
            name: name.to_string(),
            known: registry.keys().copied().collect::<Vec<_>>().join(", "),
        }),
    }
}
