//! Relaxed cell: candidate operations, mixed edges, combination-weighted
//! node aggregation and temperature schedules.

mod anneal;
mod arch;
mod candidate;
mod network;
mod relax;
mod state;

pub use anneal::{dual_temperature, AnnealSchedule, SearchPhase, DUAL_TEMPERATURE_RATIO};
pub use arch::{EdgeGroups, OperationWeights, TopologyWeights};
pub use candidate::Candidate;
pub use network::{CellNetwork, EdgeLayout, EdgeMixing, Mixing, NetworkShape};
pub use relax::{
    aggregate_gamma, aggregate_gamma_var, gamma_matrix, grouped_mixed_op, mixed_op, node_forward,
};
pub use state::SupernetState;
