use serde::{Deserialize, Serialize};

use super::anneal::{AnnealSchedule, SearchPhase};
use super::arch::{OperationWeights, TopologyWeights};
use super::network::CellNetwork;

/// Everything a search stage trains: network weights `w`, operation logits,
/// topology logits (topology stage only) and both temperature schedules.
/// `w` and the architecture logits live in separate parameter stores.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupernetState {
    pub phase: SearchPhase,
    pub network: CellNetwork,
    pub alpha: OperationWeights,
    pub beta: Option<TopologyWeights>,
    pub t_alpha: AnnealSchedule,
    pub t_beta: Option<AnnealSchedule>,
}

impl SupernetState {
    /// Order-sensitive checksum over every trained value.
    pub fn bit_checksum(&self) -> u64 {
        let mut h = self.network.weights.bit_checksum();
        h = h.rotate_left(11) ^ self.alpha.store.bit_checksum();
        if let Some(b) = &self.beta {
            h = h.rotate_left(11) ^ b.store.bit_checksum();
        }
        h
    }
}
