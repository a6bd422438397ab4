//! Independent RNG streams derived from one global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Streams are keyed by a purpose tag and an index, so adding a consumer
/// never shifts the values another consumer sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Case = 1,
    Split = 2,
    Init = 3,
    Meta = 4,
    Conventional = 5,
    Evaluation = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, id: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream as u64) ^ id)
}

pub fn rng(seed: u64, stream: Stream, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, id))
}
