//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator for one logical stream.
///
/// Streams with the same seed but different ids never overlap, so work split
/// across threads by stream id stays reproducible regardless of scheduling.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
