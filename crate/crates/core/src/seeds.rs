//! Named random streams split from one master seed.
//!
//! Every consumer of randomness (fold assignment, init, BFS roots, dropout,
//! latent noise, evaluation) draws from its own stream, so adding draws to one
//! stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedBundle {
    pub master: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl SeedBundle {
    pub fn new(master: u64) -> Self {
        SeedBundle { master }
    }

    pub fn seed_for(&self, name: &str, index: u64) -> u64 {
        splitmix(splitmix(self.master ^ fnv1a(name)) ^ splitmix(index.wrapping_add(0x5851_f42d)))
    }

    pub fn stream(&self, name: &str, index: u64) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.seed_for(name, index))
    }
}
