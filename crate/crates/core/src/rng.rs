//! Seed plumbing. Every stochastic stream is a ChaCha8 generator keyed by a
//! mixed 64-bit seed, so parallel and sequential runs draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an ordered list of words into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x2545_F491_4F6C_DD1D, |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_from(parts: &[u64]) -> Rng64 {
    Rng64::seed_from_u64(derive_seed(parts))
}
