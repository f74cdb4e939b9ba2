//! Named random sub-streams derived from one user-visible seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `name` of `seed`. The same pair always yields the same
/// sequence, and distinct names never share a stream.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
