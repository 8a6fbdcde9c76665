//! Single-cell network: one stem per input view, one cell, global average
//! pooling over the concatenated intermediate nodes and a linear classifier.
//!
//! The same type serves as the relaxed supernet (several candidates per
//! edge, mixed by architecture weights) and as the discrete stand-alone
//! network of a genotype (one candidate per kept edge).

use serde::{Deserialize, Serialize};

use super::candidate::{kaiming, Candidate, NormParams};
use super::relax::{grouped_mixed_op, node_forward};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::space::{CellSpec, Edge, Genotype, OpKind, NUM_INPUT_NODES};
use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

/// Input and output sizes around the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub cell: CellSpec,
    pub input_channels: usize,
    pub classes: usize,
}

/// Candidate operations placed on one edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeLayout {
    pub edge: Edge,
    pub ops: Vec<OpKind>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct Stem {
    conv: ParamId,
    norm: NormParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EdgeModule {
    edge: Edge,
    candidates: Vec<Candidate>,
}

/// Candidate-index groups of one edge with their weight vectors.
pub type EdgeMixing = Vec<(Vec<usize>, Var)>;

/// Architecture-dependent weights for one forward pass, already on the tape.
#[derive(Clone, Debug, Default)]
pub struct Mixing {
    /// Per edge (layout order): candidate-index groups with their weight
    /// vectors. An empty list means the edge has a single candidate used as is.
    pub edges: Vec<EdgeMixing>,
    /// Per intermediate node: weights over its incoming edges in layout order,
    /// or `None` for a plain sum.
    pub gamma: Vec<Option<Var>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellNetwork {
    shape: NetworkShape,
    layout: Vec<EdgeLayout>,
    stems: Vec<Stem>,
    edges: Vec<EdgeModule>,
    head_weight: ParamId,
    head_bias: ParamId,
    /// Network weights `w`.
    pub weights: ParamStore,
}

fn edge_name(e: Edge) -> String {
    format!("{}-{}", e.from, e.to)
}

impl CellNetwork {
    /// Build a network with the given candidates per edge. Every parameter is
    /// initialised from its own seed derived from `seed` and its name, so an
    /// (edge, operation) pair starts from the same weights whichever other
    /// candidates are present.
    pub fn build(shape: NetworkShape, layout: Vec<EdgeLayout>, seed: u64) -> Result<Self> {
        let cell = shape.cell;
        let c = cell.channels;
        if shape.input_channels == 0 || shape.classes < 2 {
            return Err(Error::invalid(
                "network needs input channels and at least two classes",
            ));
        }
        let mut prev: Option<Edge> = None;
        for l in &layout {
            if cell.edge_index(l.edge).is_none() {
                return Err(Error::invalid(format!(
                    "edge {} is not part of the cell",
                    edge_name(l.edge)
                )));
            }
            if prev.is_some_and(|p| cell.edge_index(p) >= cell.edge_index(l.edge)) {
                return Err(Error::invalid(
                    "edge layout must follow cell edge order without repeats",
                ));
            }
            if l.ops.is_empty() {
                return Err(Error::invalid(format!(
                    "edge {} has no candidate operations",
                    edge_name(l.edge)
                )));
            }
            prev = Some(l.edge);
        }

        let mut weights = ParamStore::new();
        let stems = (1..=NUM_INPUT_NODES)
            .map(|i| {
                let prefix = format!("stem{i}");
                let mut rng = rng_from_seed(derive_seed(seed, &prefix, 0));
                let k = 3;
                Stem {
                    conv: weights.add(
                        format!("{prefix}.conv"),
                        kaiming(
                            &[c, shape.input_channels, k, k],
                            shape.input_channels * k * k,
                            &mut rng,
                        ),
                    ),
                    norm: NormParams::register(&mut weights, &prefix, c),
                }
            })
            .collect();
        let edges = layout
            .iter()
            .map(|l| EdgeModule {
                edge: l.edge,
                candidates: l
                    .ops
                    .iter()
                    .map(|&op| {
                        let prefix = format!("cell.{}.{}", edge_name(l.edge), op.name());
                        let mut rng = rng_from_seed(derive_seed(seed, &prefix, 0));
                        Candidate::register(&mut weights, &prefix, op, c, &mut rng)
                    })
                    .collect(),
            })
            .collect();
        let features = c * cell.intermediate_nodes;
        let mut rng = rng_from_seed(derive_seed(seed, "head", 0));
        let head_weight = weights.add(
            "head.weight",
            kaiming(&[shape.classes, features], features, &mut rng),
        );
        let head_bias = weights.add("head.bias", Tensor::zeros(&[shape.classes]));
        Ok(CellNetwork {
            shape,
            layout,
            stems,
            edges,
            head_weight,
            head_bias,
            weights,
        })
    }

    /// Every candidate of `ops` on every edge of the cell.
    pub fn supernet(shape: NetworkShape, ops: &[OpKind], seed: u64) -> Result<Self> {
        let layout = shape
            .cell
            .edges()
            .into_iter()
            .map(|edge| EdgeLayout {
                edge,
                ops: ops.to_vec(),
            })
            .collect();
        Self::build(shape, layout, seed)
    }

    /// Discrete network of a genotype: one candidate per kept edge.
    pub fn from_genotype(shape: NetworkShape, genotype: &Genotype, seed: u64) -> Result<Self> {
        let mut layout: Vec<EdgeLayout> = genotype
            .nodes
            .iter()
            .flat_map(|n| {
                n.edges.iter().map(move |e| EdgeLayout {
                    edge: Edge::new(e.from, n.node),
                    ops: vec![e.op],
                })
            })
            .collect();
        layout.sort_by_key(|l| shape.cell.edge_index(l.edge));
        Self::build(shape, layout, seed)
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn layout(&self) -> &[EdgeLayout] {
        &self.layout
    }

    /// Layout positions of the edges entering `node`, in source order.
    pub fn incoming(&self, node: usize) -> Vec<usize> {
        (0..self.layout.len())
            .filter(|&k| self.layout[k].edge.to == node)
            .collect()
    }

    /// Logits `[batch, classes]` for the two input views.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        views: [Var; NUM_INPUT_NODES],
        mixing: Option<&Mixing>,
    ) -> Result<Var> {
        let cell = self.shape.cell;
        if let Some(m) = mixing {
            if m.edges.len() != self.edges.len() || m.gamma.len() != cell.intermediate_nodes {
                return Err(Error::invalid("mixing does not match the network layout"));
            }
        }
        let mut nodes: Vec<Var> = Vec::with_capacity(cell.last_node());
        for (stem, &view) in self.stems.iter().zip(&views) {
            let h = tape.conv2d(view, bound.get(stem.conv), 1, 1)?;
            nodes.push(stem.norm.apply(tape, bound, h)?);
        }
        for (slot, j) in cell.intermediate_nodes().enumerate() {
            let incoming = self.incoming(j);
            if incoming.is_empty() {
                let shape = tape.value(nodes[0]).shape().to_vec();
                nodes.push(tape.constant(Tensor::zeros(&shape))?);
                continue;
            }
            let mut outputs = Vec::with_capacity(incoming.len());
            for &k in &incoming {
                let module = &self.edges[k];
                let x = nodes[module.edge.from - 1];
                let cand: Vec<Var> = module
                    .candidates
                    .iter()
                    .map(|c| c.apply(tape, bound, x))
                    .collect::<Result<_>>()?;
                let groups = mixing.map(|m| m.edges[k].as_slice()).unwrap_or(&[]);
                let out = if groups.is_empty() {
                    match cand.as_slice() {
                        [single] => *single,
                        _ => {
                            return Err(Error::invalid(format!(
                                "edge {} has {} candidates but no mixing weights",
                                edge_name(module.edge),
                                cand.len()
                            )))
                        }
                    }
                } else {
                    let picked: Vec<(Vec<Var>, Var)> = groups
                        .iter()
                        .map(|(idx, w)| (idx.iter().map(|&i| cand[i]).collect(), *w))
                        .collect();
                    grouped_mixed_op(tape, &picked)?
                };
                outputs.push(out);
            }
            let gamma = mixing.and_then(|m| m.gamma[slot]);
            nodes.push(node_forward(tape, &outputs, gamma)?);
        }
        let cat = tape.concat_channels(&nodes[NUM_INPUT_NODES..])?;
        let pooled = tape.global_avg_pool(cat)?;
        tape.linear(
            pooled,
            bound.get(self.head_weight),
            bound.get(self.head_bias),
        )
    }

    /// Replace all weights with `store`, which must have the same names and shapes.
    pub fn load_weights(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.weights.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} weight tensors, found {}",
                self.weights.len(),
                store.len()
            )));
        }
        for (a, b) in self.weights.iter().zip(store.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "weight `{}` does not match `{}`",
                    a.name, b.name
                )));
            }
        }
        self.weights = store;
        Ok(())
    }
}
