//! Seed derivation. Every run has a single 64-bit seed; each consumer gets
//! its own stream derived from it so that adding a consumer never perturbs
//! the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams split off a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Factors,
    Nuisance,
    Mixing,
    ObservationNoise,
    Pairing,
    Init,
    Batches,
    Reparam,
    Labels,
    Variants,
    Counterexample,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Factors => 0x01,
            Stream::Nuisance => 0x02,
            Stream::Mixing => 0x03,
            Stream::ObservationNoise => 0x04,
            Stream::Pairing => 0x05,
            Stream::Init => 0x06,
            Stream::Batches => 0x07,
            Stream::Reparam => 0x08,
            Stream::Labels => 0x09,
            Stream::Variants => 0x0a,
            Stream::Counterexample => 0x0b,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive(seed: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.tag().wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    rng(derive(seed, stream))
}
