//! Discrete genotypes from trained architecture weights, and per-combination
//! importance scores.

use serde::{Deserialize, Serialize};

use super::strategy::{top_k, TopologyParameterization};
use crate::error::{Error, Result};
use crate::space::{
    CellSpec, Edge, Genotype, GenotypeEdge, GenotypeMeta, GenotypeNode, OpKind, TopologyPolicy,
    TopologySpace,
};
use crate::supernet::{OperationWeights, TopologyWeights};

/// Weighted candidates of one edge.
pub type EdgeScores = (Edge, Vec<(OpKind, f64)>);

/// Best non-Zero candidate and its weight; ties go to the earlier candidate.
fn best_non_zero(ops: &[(OpKind, f64)]) -> Option<(OpKind, f64)> {
    ops.iter().filter(|(op, _)| *op != OpKind::Zero).fold(
        None,
        |best: Option<(OpKind, f64)>, &(op, w)| match best {
            Some((_, bw)) if bw >= w => best,
            _ => Some((op, w)),
        },
    )
}

/// Per-edge operation scores at `T = 1`, in layout order.
pub fn operation_scores(alpha: &OperationWeights) -> Result<Vec<EdgeScores>> {
    (0..alpha.len())
        .map(|k| Ok((alpha.edges[k].edge, alpha.weighted_ops(k, 1.0)?)))
        .collect()
}

/// Edge importance `max_{o ≠ Zero} α_o` for every edge.
pub fn edge_importance(scores: &[EdgeScores]) -> Vec<(Edge, f64)> {
    scores
        .iter()
        .map(|(e, ops)| (*e, best_non_zero(ops).map_or(f64::NEG_INFINITY, |(_, w)| w)))
        .collect()
}

/// DARTS rule on arbitrary per-edge scores: each edge keeps its best
/// non-Zero operation, each node keeps its two most important edges (ties
/// to the lower source). Only comparisons are used, so any strictly
/// increasing transform of the scores leaves the result unchanged.
pub fn derive_darts_from_scores(scores: &[EdgeScores], cell: &CellSpec) -> Result<Genotype> {
    let mut nodes = Vec::with_capacity(cell.intermediate_nodes);
    for j in cell.intermediate_nodes() {
        let incoming: Vec<&EdgeScores> = scores.iter().filter(|(e, _)| e.to == j).collect();
        let mut ranked: Vec<(usize, OpKind, f64)> = incoming
            .iter()
            .filter_map(|(e, ops)| best_non_zero(ops).map(|(op, w)| (e.from, op, w)))
            .collect();
        if ranked.len() < 2 {
            return Err(Error::invalid(format!(
                "node {j} has fewer than two scorable incoming edges"
            )));
        }
        ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        let mut kept: Vec<GenotypeEdge> = ranked[..2]
            .iter()
            .map(|&(from, op, _)| GenotypeEdge { from, op })
            .collect();
        kept.sort_by_key(|e| e.from);
        nodes.push(GenotypeNode {
            node: j,
            edges: kept,
            dropped: vec![],
        });
    }
    Ok(Genotype {
        policy: TopologyPolicy::Pairwise,
        nodes,
        meta: Some(GenotypeMeta {
            derivation: Some("darts".into()),
            ..GenotypeMeta::default()
        }),
    })
}

/// DARTS-policy genotype from operation-search weights.
pub fn derive_darts_policy(alpha: &OperationWeights, cell: &CellSpec) -> Result<Genotype> {
    derive_darts_from_scores(&operation_scores(alpha)?, cell)
}

/// DOTS-policy genotype: per node the selected combination, per kept edge its
/// heaviest retained candidate. Edges resolving to Zero are recorded as
/// dropped; a pairwise node left with a different edge count gets a warning.
pub fn derive_dots_policy(
    topology: &TopologyWeights,
    parameterization: &dyn TopologyParameterization,
    t_beta: f64,
    retained: &[EdgeScores],
    policy: TopologyPolicy,
) -> Result<Genotype> {
    let policy = parameterization.derived_policy(policy);
    let mut nodes = Vec::with_capacity(topology.spaces.len());
    let mut warnings = Vec::new();
    for (slot, space) in topology.spaces.iter().enumerate() {
        let selection = parameterization.select_edges(topology.logits(slot), space, t_beta)?;
        warnings.extend(selection.warning);
        let mut edges = Vec::new();
        let mut dropped = Vec::new();
        for from in selection.predecessors {
            let edge = Edge::new(from, space.node);
            let (_, ops) = retained.iter().find(|(e, _)| *e == edge).ok_or_else(|| {
                Error::invalid(format!(
                    "no retained candidates for edge {from}-{}",
                    space.node
                ))
            })?;
            let (op, _) = ops
                .iter()
                .copied()
                .fold(None, |best: Option<(OpKind, f64)>, (op, w)| match best {
                    Some((_, bw)) if bw >= w => best,
                    _ => Some((op, w)),
                })
                .ok_or_else(|| {
                    Error::invalid(format!("edge {from}-{} retains nothing", space.node))
                })?;
            if op == OpKind::Zero {
                dropped.push(from);
            } else {
                edges.push(GenotypeEdge { from, op });
            }
        }
        if policy == TopologyPolicy::Pairwise && edges.len() != 2 {
            warnings.push(format!(
                "node {}: {} operation edges after dropping zero edges",
                space.node,
                edges.len()
            ));
        }
        nodes.push(GenotypeNode {
            node: space.node,
            edges,
            dropped,
        });
    }
    Ok(Genotype {
        policy,
        nodes,
        meta: Some(GenotypeMeta {
            derivation: Some(format!("dots:{}", parameterization.name())),
            warnings,
            ..GenotypeMeta::default()
        }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinationScore {
    pub index: usize,
    pub code: String,
    pub label: String,
    /// Sum of operation-derived edge importances over the combination.
    pub op_score: f64,
    /// Combination weight from the topology search, if it ran.
    pub combo_score: Option<f64>,
    /// Order-equivalent form of `combo_score` used for rank statistics.
    pub combo_rank_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeImportance {
    pub node: usize,
    pub scores: Vec<CombinationScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub nodes: Vec<NodeImportance>,
}

impl ImportanceReport {
    pub fn node(&self, node: usize) -> Option<&NodeImportance> {
        self.nodes.iter().find(|n| n.node == node)
    }
}

/// Topology-stage weights with the parameterisation and temperature they are read at.
pub struct TopologyReading<'a> {
    pub weights: &'a TopologyWeights,
    pub parameterization: &'a dyn TopologyParameterization,
    pub temperature: f64,
}

/// Score (a), operation-derived, and score (b), from the topology weights,
/// for every combination of every node.
pub fn importance_report(
    edge_importance: &[(Edge, f64)],
    spaces: &[TopologySpace],
    topology: Option<&TopologyReading<'_>>,
) -> Result<ImportanceReport> {
    let mut nodes = Vec::with_capacity(spaces.len());
    for (slot, space) in spaces.iter().enumerate() {
        let importance: Vec<f64> = (1..=space.in_degree)
            .map(|from| {
                edge_importance
                    .iter()
                    .find(|(e, _)| *e == Edge::new(from, space.node))
                    .map(|(_, w)| *w)
                    .ok_or_else(|| {
                        Error::invalid(format!("no importance for edge {from}-{}", space.node))
                    })
            })
            .collect::<Result<_>>()?;
        let (combo, rank) = match topology {
            Some(r) => {
                let logits = r.weights.logits(slot);
                (
                    Some(
                        r.parameterization
                            .combination_scores(logits, space, r.temperature)?,
                    ),
                    Some(
                        r.parameterization
                            .ranking_scores(logits, space, r.temperature)?,
                    ),
                )
            }
            None => (None, None),
        };
        let scores = space
            .combinations
            .iter()
            .enumerate()
            .map(|(i, c)| CombinationScore {
                index: i,
                code: c.code_string(),
                label: c.label(),
                op_score: c.predecessors().iter().map(|&p| importance[p - 1]).sum(),
                combo_score: combo.as_ref().map(|v| v[i]),
                combo_rank_score: rank.as_ref().map(|v| v[i]),
            })
            .collect();
        nodes.push(NodeImportance {
            node: space.node,
            scores,
        });
    }
    Ok(ImportanceReport { nodes })
}

/// Top-2 edges of a node by importance, 1-based and ascending.
pub fn top_two_edges(importance: &[f64]) -> Vec<usize> {
    top_k(importance, 2).into_iter().map(|i| i + 1).collect()
}
