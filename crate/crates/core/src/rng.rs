//! Seed derivation and serializable RNG state.
//!
//! Every random stream in a run descends from the single run seed through
//! labelled derivation steps, e.g. `run → "op-search" → 0` or
//! `run → "rankcorr" → experiment → variant → training seed`. A derived seed
//! depends only on its path, so serial and parallel execution agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Child seed for `(parent, label, index)`.
pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exact position of a ChaCha8 stream, for checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<Rng> {
        let bytes: [u8; 32] = hex::decode(&self.seed).ok()?.try_into().ok()?;
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}
