//! Deterministic splittable random streams.
//!
//! Every cell in a simulated tree, and every independent Monte Carlo unit
//! elsewhere in the toolkit, draws from its own ChaCha8 stream. Stream keys
//! are derived by folding identifying words (master seed, replicate index,
//! tree label digits, purpose tag) through a splitmix64 chain, so the draws
//! a unit consumes depend only on its identity and never on the order in
//! which threads happen to process units.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams for different draw families disjoint even when
/// the rest of the key coincides.
pub mod purpose {
    pub const DIVISION: u64 = 0x01;
    pub const PARTICLE: u64 = 0x02;
    pub const CACHE: u64 = 0x03;
    pub const VERIFY: u64 = 0x04;
    pub const PROFILE: u64 = 0x05;
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key identifying one random stream. Cheap to copy and to split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    state: u64,
}

impl StreamKey {
    pub fn root(master_seed: u64) -> Self {
        StreamKey {
            state: splitmix64(master_seed),
        }
    }

    /// Derive the key for a child unit identified by `word`.
    pub fn child(self, word: u64) -> Self {
        StreamKey {
            state: splitmix64(self.state ^ splitmix64(word)),
        }
    }

    /// Fold a byte string (for example a tree label) into the key.
    pub fn child_bytes(self, bytes: &[u8]) -> Self {
        let mut key = self.child(bytes.len() as u64);
        for &b in bytes {
            key = key.child(u64::from(b));
        }
        key
    }

    /// Instantiate the stream.
    pub fn rng(self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut s = self.state;
        for chunk in seed.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
