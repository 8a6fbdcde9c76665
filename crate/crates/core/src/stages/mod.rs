//! Operation search, topology search and genotype derivation.

mod derive;
mod plan;
mod search;
mod strategy;

pub use derive::{
    derive_darts_from_scores, derive_darts_policy, derive_dots_policy, edge_importance,
    importance_report, operation_scores, top_two_edges, CombinationScore, EdgeScores,
    ImportanceReport, NodeImportance, TopologyReading,
};
pub use plan::{OptimizerConfig, StagePlan};
pub use search::{
    MetricsRow, SearchCheckpoint, SearchOutcome, SearchRun, SearchSetup, CONCENTRATION_WARNING,
};
pub use strategy::{
    operation_strategies, operation_strategy, topology_parameterization,
    topology_parameterizations, EdgeSelection, OperationStrategy, RetainedEdge, RetainedFile,
    RetainedMixing, TopologyParameterization,
};
