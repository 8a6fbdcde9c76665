//! Architecture parameters: operation logits `α′` and topology logits `β′`.

use serde::{Deserialize, Serialize};

use super::network::EdgeMixing;
use crate::error::{Error, Result};
use crate::space::{CellSpec, Edge, OpKind, TopologyPolicy, TopologySpace};
use crate::tensor::{softmax_t, BoundParams, ParamId, ParamStore, Tape, Tensor};

/// Candidate groups of one edge; each group is normalised on its own.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeGroups {
    pub edge: Edge,
    pub groups: Vec<Vec<OpKind>>,
}

impl EdgeGroups {
    /// Candidates in network order (groups concatenated).
    pub fn candidates(&self) -> Vec<OpKind> {
        self.groups.iter().flatten().copied().collect()
    }
}

/// Unnormalised operation logits, one vector per (edge, group).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperationWeights {
    pub edges: Vec<EdgeGroups>,
    pub store: ParamStore,
    ids: Vec<Vec<ParamId>>,
}

impl OperationWeights {
    /// All-zero logits.
    pub fn zeros(edges: Vec<EdgeGroups>) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut ids = Vec::with_capacity(edges.len());
        for eg in &edges {
            if eg.groups.is_empty() || eg.groups.iter().any(Vec::is_empty) {
                return Err(Error::invalid(format!(
                    "edge {}-{} has an empty candidate group",
                    eg.edge.from, eg.edge.to
                )));
            }
            ids.push(
                eg.groups
                    .iter()
                    .enumerate()
                    .map(|(g, ops)| {
                        store.add(
                            format!("alpha.{}-{}.g{g}", eg.edge.from, eg.edge.to),
                            Tensor::zeros(&[ops.len()]),
                        )
                    })
                    .collect(),
            );
        }
        Ok(OperationWeights { edges, store, ids })
    }

    /// The same groups on every edge of `cell`.
    pub fn uniform_layout(cell: &CellSpec, groups: &[Vec<OpKind>]) -> Result<Self> {
        Self::zeros(
            cell.edges()
                .into_iter()
                .map(|edge| EdgeGroups {
                    edge,
                    groups: groups.to_vec(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn position(&self, edge: Edge) -> Option<usize> {
        self.edges.iter().position(|e| e.edge == edge)
    }

    pub fn logits(&self, edge: usize, group: usize) -> &[f64] {
        self.store.get(self.ids[edge][group]).value.data()
    }

    pub fn set_logits(&mut self, edge: usize, group: usize, values: &[f64]) -> Result<()> {
        let p = self.store.get_mut(self.ids[edge][group]);
        if p.value.numel() != values.len() {
            return Err(Error::shape(
                "set_logits",
                format!("{} values for {} candidates", values.len(), p.value.numel()),
            ));
        }
        p.value.data_mut().copy_from_slice(values);
        Ok(())
    }

    /// Softmax of each group of `edge` at temperature `t`.
    pub fn normalized(&self, edge: usize, t: f64) -> Result<Vec<Vec<f64>>> {
        (0..self.edges[edge].groups.len())
            .map(|g| softmax_t(self.logits(edge, g), t))
            .collect()
    }

    /// `(op, weight)` over all candidates of `edge`, each group normalised at `t`.
    pub fn weighted_ops(&self, edge: usize, t: f64) -> Result<Vec<(OpKind, f64)>> {
        let norm = self.normalized(edge, t)?;
        Ok(self.edges[edge]
            .groups
            .iter()
            .zip(norm)
            .flat_map(|(ops, w)| ops.iter().copied().zip(w).collect::<Vec<_>>())
            .collect())
    }

    /// Bind the logits to the tape and build per-edge mixing groups. Edges
    /// holding a single candidate get no mixing entry.
    pub fn bind_mixing(
        &self,
        tape: &mut Tape,
        trainable: bool,
        t: f64,
    ) -> Result<(BoundParams, Vec<EdgeMixing>)> {
        let bound = self.store.bind(tape, trainable)?;
        let mut mixing = Vec::with_capacity(self.edges.len());
        for (k, eg) in self.edges.iter().enumerate() {
            if eg.groups.len() == 1 && eg.groups[0].len() == 1 {
                mixing.push(Vec::new());
                continue;
            }
            let mut offset = 0;
            let mut groups = Vec::with_capacity(eg.groups.len());
            for (g, ops) in eg.groups.iter().enumerate() {
                let w = tape.softmax(bound.get(self.ids[k][g]), t)?;
                groups.push(((offset..offset + ops.len()).collect(), w));
                offset += ops.len();
            }
            mixing.push(groups);
        }
        Ok((bound, mixing))
    }
}

/// Unnormalised topology logits, one vector per intermediate node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyWeights {
    pub policy: TopologyPolicy,
    pub spaces: Vec<TopologySpace>,
    pub store: ParamStore,
    ids: Vec<ParamId>,
}

impl TopologyWeights {
    /// Zero logits; `count` gives the logit count for each node's space.
    pub fn zeros(
        cell: &CellSpec,
        policy: TopologyPolicy,
        count: impl Fn(&TopologySpace) -> usize,
    ) -> Result<Self> {
        let mut spaces = Vec::with_capacity(cell.intermediate_nodes);
        let mut store = ParamStore::new();
        let mut ids = Vec::with_capacity(cell.intermediate_nodes);
        for j in cell.intermediate_nodes() {
            let space = TopologySpace::build(policy, j, cell.in_degree(j))?;
            ids.push(store.add(format!("beta.{j}"), Tensor::zeros(&[count(&space)])));
            spaces.push(space);
        }
        Ok(TopologyWeights {
            policy,
            spaces,
            store,
            ids,
        })
    }

    pub fn logits(&self, slot: usize) -> &[f64] {
        self.store.get(self.ids[slot]).value.data()
    }

    pub fn set_logits(&mut self, slot: usize, values: &[f64]) -> Result<()> {
        let p = self.store.get_mut(self.ids[slot]);
        if p.value.numel() != values.len() {
            return Err(Error::shape(
                "set_logits",
                format!("{} values for {} logits", values.len(), p.value.numel()),
            ));
        }
        p.value.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn id(&self, slot: usize) -> ParamId {
        self.ids[slot]
    }

    /// Combination probabilities `β` of node slot `slot` at temperature `t`.
    pub fn normalized(&self, slot: usize, t: f64) -> Result<Vec<f64>> {
        softmax_t(self.logits(slot), t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouped_logits_normalise_per_group() {
        let groups = vec![
            vec![OpKind::Zero, OpKind::SkipConnect],
            vec![OpKind::SepConv3x3],
        ];
        let cell = CellSpec::new(2, 4).unwrap();
        let mut w = OperationWeights::uniform_layout(&cell, &groups).unwrap();
        assert_eq!(w.len(), 5);
        w.set_logits(0, 0, &[0.0, 2f64.ln()]).unwrap();
        let norm = w.normalized(0, 1.0).unwrap();
        assert!((norm[0][1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(norm[1], vec![1.0]);
        assert!(w.set_logits(0, 1, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn topology_logits_follow_the_space() {
        let cell = CellSpec::new(4, 4).unwrap();
        let t =
            TopologyWeights::zeros(&cell, TopologyPolicy::Pairwise, TopologySpace::len).unwrap();
        let sizes: Vec<usize> = (0..4).map(|s| t.logits(s).len()).collect();
        assert_eq!(sizes, vec![1, 3, 6, 10]);
        assert!((t.normalized(3, 10.0).unwrap()[0] - 0.1).abs() < 1e-15);
    }
}
