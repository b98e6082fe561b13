//! Counter-based random streams.
//!
//! Every draw the solver makes is addressed by `(seed, iteration, oracle kind)`;
//! the draw index is the position inside the resulting ChaCha stream. Sample
//! streams therefore do not depend on how many draws earlier iterations used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator handed to the sampling oracles.
pub type SampleRng = ChaCha8Rng;

/// Which oracle a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleKind {
    /// Gradient batch; `attempt` counts re-estimations within one iteration.
    Gradient { attempt: u8 },
    Hessian,
    /// Shared-sample value pair at `x_k` and the trial point.
    Value,
    /// Fresh value estimate at the corrected trial point.
    ValueCorrection,
    /// Anything outside the iteration loop (initial points, data generation).
    Auxiliary(u8),
}

impl OracleKind {
    fn code(self) -> u64 {
        match self {
            OracleKind::Gradient { attempt } => u64::from(attempt),
            OracleKind::Hessian => 0x40,
            OracleKind::Value => 0x41,
            OracleKind::ValueCorrection => 0x42,
            OracleKind::Auxiliary(tag) => 0x80 | u64::from(tag),
        }
    }
}

/// Seed-keyed family of independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for `kind` at `iteration`.
    pub fn substream(&self, iteration: u64, kind: OracleKind) -> SampleRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&splitmix(self.seed).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream((iteration << 8) | kind.code());
        rng
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
