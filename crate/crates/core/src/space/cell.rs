use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_INPUT_NODES: usize = 2;

/// Directed edge `(from, to)` between 1-based node ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

impl Edge {
    pub fn new(from: usize, to: usize) -> Self {
        Edge { from, to }
    }
}

/// Shape of a cell. Nodes are numbered from 1: the two inputs are nodes 1
/// and 2, intermediate node `j` (3, 4, …) receives an edge from every node
/// `i < j`, and the output concatenates all intermediate nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub intermediate_nodes: usize,
    pub channels: usize,
}

impl CellSpec {
    pub fn new(intermediate_nodes: usize, channels: usize) -> Result<Self> {
        if intermediate_nodes == 0 || channels == 0 {
            return Err(Error::invalid(
                "cell needs at least one intermediate node and one channel",
            ));
        }
        Ok(CellSpec {
            intermediate_nodes,
            channels,
        })
    }

    pub fn first_intermediate(&self) -> usize {
        NUM_INPUT_NODES + 1
    }

    pub fn last_node(&self) -> usize {
        NUM_INPUT_NODES + self.intermediate_nodes
    }

    pub fn intermediate_nodes(&self) -> std::ops::RangeInclusive<usize> {
        self.first_intermediate()..=self.last_node()
    }

    pub fn is_intermediate(&self, node: usize) -> bool {
        self.intermediate_nodes().contains(&node)
    }

    /// Number of incoming edges of intermediate node `node`.
    pub fn in_degree(&self, node: usize) -> usize {
        node - 1
    }

    /// All edges, grouped by target node and ordered by source.
    pub fn edges(&self) -> Vec<Edge> {
        self.intermediate_nodes()
            .flat_map(|to| (1..to).map(move |from| Edge { from, to }))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.intermediate_nodes().map(|j| self.in_degree(j)).sum()
    }

    /// Position of `edge` in [`CellSpec::edges`].
    pub fn edge_index(&self, edge: Edge) -> Option<usize> {
        if !self.is_intermediate(edge.to) || edge.from == 0 || edge.from >= edge.to {
            return None;
        }
        let before: usize = (self.first_intermediate()..edge.to)
            .map(|j| self.in_degree(j))
            .sum();
        Some(before + edge.from - 1)
    }
}
