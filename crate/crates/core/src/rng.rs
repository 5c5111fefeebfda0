//! Counter-based random streams.
//!
//! Every random draw in a run is keyed by `(base_seed, iteration, agent,
//! stream)`. The key is the ChaCha seed itself, so distinct tuples always give
//! distinct keys and results never depend on the order in which agents are
//! scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Logical random stream within one `(iteration, agent)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    /// Upper-level sample ξ_f.
    GradF,
    /// Lower-level sample ξ_g, shared by every ∇g evaluation of one step.
    GradG,
    /// Per-round graph for dynamic topologies (agent index 0).
    Topology,
    /// Random initial iterates.
    Init,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::GradF, Stream::GradG, Stream::Topology, Stream::Init];

    fn tag(self) -> u64 {
        match self {
            Stream::GradF => 0x6766_0001,
            Stream::GradG => 0x6767_0002,
            Stream::Topology => 0x746f_0003,
            Stream::Init => 0x696e_0004,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DrawKey([u64; 4]);

impl DrawKey {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        for (chunk, word) in seed.chunks_exact_mut(8).zip(self.0) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// Fold the key into a single 64-bit seed (SplitMix64 finalizer chain).
    pub fn to_seed(&self) -> u64 {
        self.0.iter().fold(0x9e37_79b9_7f4a_7c15u64, |h, &w| splitmix(h ^ splitmix(w)))
    }

    pub fn words(&self) -> [u64; 4] {
        self.0
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_draw_key(base_seed: u64, k: u64, agent: usize, stream: Stream) -> DrawKey {
    DrawKey([base_seed, k, agent as u64, stream.tag()])
}

/// Keys for the two samples (ξ_f, ξ_g) an agent draws in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleKeys {
    pub f: DrawKey,
    pub g: DrawKey,
}

impl SampleKeys {
    pub fn derive(base_seed: u64, k: u64, agent: usize) -> Self {
        Self {
            f: derive_draw_key(base_seed, k, agent, Stream::GradF),
            g: derive_draw_key(base_seed, k, agent, Stream::GradG),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn same_inputs_same_key() {
        let a = derive_draw_key(7, 3, 2, Stream::GradG);
        let b = derive_draw_key(7, 3, 2, Stream::GradG);
        assert_eq!(a, b);
        let (mut ra, mut rb) = (a.rng(), b.rng());
        assert_eq!(ra.random::<u64>(), rb.random::<u64>());
    }

    #[test]
    fn no_collisions_over_a_million_tuples() {
        let mut keys = HashSet::with_capacity(1 << 20);
        let mut seeds = HashSet::with_capacity(1 << 20);
        for k in 0..2_500u64 {
            for agent in 0..100 {
                for stream in Stream::ALL {
                    let key = derive_draw_key(42, k, agent, stream);
                    assert!(keys.insert(key));
                    seeds.insert(key.to_seed());
                }
            }
        }
        assert_eq!(keys.len(), 1_000_000);
        // the folded 64-bit seed is a hash; at this scale it should not collide either
        assert_eq!(seeds.len(), 1_000_000);
    }

    #[test]
    fn streams_are_disjoint() {
        let tags: HashSet<u64> = Stream::ALL.iter().map(|s| s.tag()).collect();
        assert_eq!(tags.len(), Stream::ALL.len());
    }
}
