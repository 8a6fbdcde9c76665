//! Discrete search space: operations, cell shape, edge combinations and
//! genotypes.

mod cell;
mod genotype;
mod ops;
mod topology;

pub use cell::{CellSpec, Edge, NUM_INPUT_NODES};
pub use genotype::{
    validate_genotype, Genotype, GenotypeEdge, GenotypeMeta, GenotypeNode, ValidationReport,
    Violation, ViolationKind,
};
pub use ops::{group_partition_v1, group_partition_v2, OpKind, OperationSet};
pub use topology::{
    build_flexible_space, build_pairwise_space, EdgeCombination, TopologyPolicy, TopologySpace,
};
