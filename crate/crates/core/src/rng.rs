//! Seeded random streams. Work is cut into fixed-size chunks and chunk `k`
//! draws from stream `k` of a ChaCha8 generator, so results do not depend on
//! how many threads run the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Draws per chunk.
pub const CHUNK: usize = 256;

/// Generator for chunk `stream` of the run seeded with `seed`.
pub fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a parent seed with a label into an independent child seed.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from several labels in turn.
pub fn derive_seed_path(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(seed, |s, &l| derive_seed(s, l))
}

/// Number of chunks covering `n` draws.
pub fn num_chunks(n: usize) -> usize {
    n.div_ceil(CHUNK)
}
