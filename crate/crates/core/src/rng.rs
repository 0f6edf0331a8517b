//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by the
//! run seed. ChaCha is counter based, so each `(purpose, index)` pair is
//! mapped onto its own 64-bit stream id and the draws of one day or one
//! replication never depend on how many values another stream consumed. This
//! is what makes parallel replications bit-identical to sequential ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Logical purpose of a substream. The discriminant is folded into the
/// stream id so that, e.g., the Brownian driver of day 3 and the noise of
/// day 3 are unrelated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamKind {
    VolatilityDriver = 1,
    PriceDriver = 2,
    Jumps = 3,
    Noise = 4,
    MgfReplication = 5,
    Replication = 6,
    Multistart = 7,
    Auxiliary = 8,
}

/// Factory of substreams derived from a single 64-bit seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for substream `(kind, index)`.
    pub fn stream(&self, kind: StreamKind, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id(kind, index));
        rng
    }

    /// A child tree, used to hand each Monte-Carlo replication its own seed
    /// space.
    pub fn child(&self, kind: StreamKind, index: u64) -> SeedTree {
        SeedTree {
            seed: splitmix64(self.seed ^ splitmix64(stream_id(kind, index))),
        }
    }
}

fn stream_id(kind: StreamKind, index: u64) -> u64 {
    // 8 bits of purpose, 56 bits of index.
    ((kind as u64) << 56) | (index & 0x00FF_FFFF_FFFF_FFFF)
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
