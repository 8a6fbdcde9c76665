//! Discrete cell description and its JSON file format.
//!
//! ```json
//! {
//!   "policy": "pairwise",
//!   "nodes": [
//!     { "node": 3, "edges": [ { "from": 1, "op": "sep_conv_3x3" }, { "from": 2, "op": "skip_connect" } ] }
//!   ],
//!   "meta": { "derivation": "dots", "config_hash": "…", "seed": 7, "tool_version": "0.1.0", "warnings": [] }
//! }
//! ```
//!
//! `dropped` lists predecessors whose chosen operation resolved to zero; they
//! count towards the node's edge budget but carry no operation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cell::CellSpec;
use super::ops::{OpKind, OperationSet};
use super::topology::TopologyPolicy;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenotypeEdge {
    pub from: usize,
    pub op: OpKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeNode {
    pub node: usize,
    pub edges: Vec<GenotypeEdge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<usize>,
}

impl GenotypeNode {
    pub fn edge_budget(&self) -> usize {
        self.edges.len() + self.dropped.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genotype {
    pub policy: TopologyPolicy,
    pub nodes: Vec<GenotypeNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<GenotypeMeta>,
}

impl Genotype {
    pub fn node(&self, node: usize) -> Option<&GenotypeNode> {
        self.nodes.iter().find(|n| n.node == node)
    }

    pub fn node_mut(&mut self, node: usize) -> Option<&mut GenotypeNode> {
        self.nodes.iter_mut().find(|n| n.node == node)
    }

    pub fn meta_mut(&mut self) -> &mut GenotypeMeta {
        self.meta.get_or_insert_with(GenotypeMeta::default)
    }

    pub fn warnings(&self) -> &[String] {
        self.meta
            .as_ref()
            .map(|m| m.warnings.as_slice())
            .unwrap_or(&[])
    }

    /// Total operation-bearing edges.
    pub fn num_edges(&self) -> usize {
        self.nodes.iter().map(|n| n.edges.len()).sum()
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Genotype(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(
        &self,
        spec: &CellSpec,
        policy: TopologyPolicy,
        ops: &OperationSet,
    ) -> ValidationReport {
        validate_genotype(self, spec, policy, ops)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    EdgeCount,
    PredecessorOrdering,
    UnknownNode,
    MissingNode,
    DuplicateNode,
    DuplicateEdge,
    Operation,
    Policy,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::EdgeCount => "edge-count",
            ViolationKind::PredecessorOrdering => "predecessor-ordering",
            ViolationKind::UnknownNode => "unknown-node",
            ViolationKind::MissingNode => "missing-node",
            ViolationKind::DuplicateNode => "duplicate-node",
            ViolationKind::DuplicateEdge => "duplicate-edge",
            ViolationKind::Operation => "operation",
            ViolationKind::Policy => "policy",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "[{}] node {n}: {}", self.kind, self.detail),
            None => write!(f, "[{}] {}", self.kind, self.detail),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    /// `Ok` when valid, otherwise a genotype error listing every violation.
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let lines: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        Err(Error::Genotype(lines.join("; ")))
    }
}

/// Check a genotype against a cell shape, a topology policy and an operation
/// set. Every problem is collected rather than failing on the first.
pub fn validate_genotype(
    g: &Genotype,
    spec: &CellSpec,
    policy: TopologyPolicy,
    ops: &OperationSet,
) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |kind, node, detail: String| violations.push(Violation { kind, node, detail });

    if g.policy != policy {
        push(
            ViolationKind::Policy,
            None,
            format!(
                "genotype declares `{}` but `{policy}` was requested",
                g.policy
            ),
        );
    }
    for node in spec.intermediate_nodes() {
        match g.nodes.iter().filter(|n| n.node == node).count() {
            0 => push(
                ViolationKind::MissingNode,
                Some(node),
                "node absent from genotype".into(),
            ),
            1 => {}
            k => push(
                ViolationKind::DuplicateNode,
                Some(node),
                format!("node listed {k} times"),
            ),
        }
    }
    for n in &g.nodes {
        if !spec.is_intermediate(n.node) {
            push(
                ViolationKind::UnknownNode,
                Some(n.node),
                format!(
                    "not an intermediate node of a {}-node cell",
                    spec.intermediate_nodes
                ),
            );
            continue;
        }
        let mut seen = Vec::new();
        let sources = n
            .edges
            .iter()
            .map(|e| e.from)
            .chain(n.dropped.iter().copied());
        for from in sources {
            if from == 0 || from >= n.node {
                push(
                    ViolationKind::PredecessorOrdering,
                    Some(n.node),
                    format!("edge ({from},{}) does not come from a predecessor", n.node),
                );
            }
            if seen.contains(&from) {
                push(
                    ViolationKind::DuplicateEdge,
                    Some(n.node),
                    format!("edge from {from} repeated"),
                );
            }
            seen.push(from);
        }
        for e in &n.edges {
            if !ops.contains(e.op) {
                push(
                    ViolationKind::Operation,
                    Some(n.node),
                    format!("operation `{}` not in the operation set", e.op),
                );
            }
        }
        let budget = n.edge_budget();
        let ok = match policy {
            TopologyPolicy::Pairwise => budget == 2,
            TopologyPolicy::Flexible => budget >= 1,
        };
        if !ok {
            push(
                ViolationKind::EdgeCount,
                Some(n.node),
                format!("{budget} edges under the {policy} policy"),
            );
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(from: usize, op: OpKind) -> GenotypeEdge {
        GenotypeEdge { from, op }
    }

    fn two_node_genotype() -> Genotype {
        Genotype {
            policy: TopologyPolicy::Pairwise,
            nodes: vec![
                GenotypeNode {
                    node: 3,
                    edges: vec![edge(1, OpKind::SepConv3x3), edge(2, OpKind::SkipConnect)],
                    dropped: vec![],
                },
                GenotypeNode {
                    node: 4,
                    edges: vec![edge(1, OpKind::MaxPool3x3), edge(3, OpKind::DilConv5x5)],
                    dropped: vec![],
                },
            ],
            meta: None,
        }
    }

    #[test]
    fn valid_genotype_passes() {
        let spec = CellSpec::new(2, 4).unwrap();
        let report = two_node_genotype().validate(
            &spec,
            TopologyPolicy::Pairwise,
            &OperationSet::canonical(),
        );
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn three_edges_violate_pairwise_edge_count() {
        let spec = CellSpec::new(2, 4).unwrap();
        let mut g = two_node_genotype();
        g.nodes[1].edges.push(edge(2, OpKind::SkipConnect));
        let report = g.validate(&spec, TopologyPolicy::Pairwise, &OperationSet::canonical());
        assert!(report.has(ViolationKind::EdgeCount));
        assert_eq!(ViolationKind::EdgeCount.to_string(), "edge-count");
    }

    #[test]
    fn backwards_edge_violates_ordering() {
        let spec = CellSpec::new(4, 4).unwrap();
        let mut g = two_node_genotype();
        g.nodes.push(GenotypeNode {
            node: 5,
            edges: vec![edge(1, OpKind::SkipConnect), edge(2, OpKind::SkipConnect)],
            dropped: vec![],
        });
        g.nodes.push(GenotypeNode {
            node: 6,
            edges: vec![edge(1, OpKind::SkipConnect), edge(2, OpKind::SkipConnect)],
            dropped: vec![],
        });
        g.nodes[0].edges[0].from = 5;
        let report = g.validate(&spec, TopologyPolicy::Pairwise, &OperationSet::canonical());
        assert!(report.has(ViolationKind::PredecessorOrdering));
    }

    #[test]
    fn foreign_operations_and_missing_nodes_are_reported() {
        let spec = CellSpec::new(3, 4).unwrap();
        let small = OperationSet::new(vec![OpKind::SkipConnect, OpKind::SepConv3x3]).unwrap();
        let report = two_node_genotype().validate(&spec, TopologyPolicy::Pairwise, &small);
        assert!(report.has(ViolationKind::Operation));
        assert!(report.has(ViolationKind::MissingNode));
        assert!(report.into_result().is_err());
    }

    #[test]
    fn dropped_edges_count_towards_the_budget() {
        let spec = CellSpec::new(2, 4).unwrap();
        let mut g = two_node_genotype();
        g.nodes[1].edges.pop();
        g.nodes[1].dropped.push(2);
        assert!(g
            .validate(&spec, TopologyPolicy::Pairwise, &OperationSet::canonical())
            .is_valid());
        let json = g.to_json().unwrap();
        assert!(json.contains("\"dropped\""));
        assert_eq!(Genotype::from_json(&json).unwrap(), g);
    }

    #[test]
    fn json_field_names_match_the_file_format() {
        let json = two_node_genotype().to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["policy"], "pairwise");
        assert_eq!(value["nodes"][0]["node"], 3);
        assert_eq!(value["nodes"][0]["edges"][0]["from"], 1);
        assert_eq!(value["nodes"][0]["edges"][0]["op"], "sep_conv_3x3");
    }
}
