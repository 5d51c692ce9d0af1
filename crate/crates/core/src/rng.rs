//! Named random sub-streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Features = 1,
    Init = 2,
    TrainNegatives = 3,
    EvalNegatives = 4,
    Selection = 5,
    Synthetic = 6,
}

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn stream_rng(master: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng
}

/// Seed for a keyed draw, e.g. one per `(node, time)` query.
pub fn keyed_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(master), |acc, &k| mix64(acc ^ k))
}
