//! Seed derivation for sharded sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples per shard. Fixed so that results do not depend on thread count.
pub const SHARD_LEN: usize = 8192;

/// Generator for shard `shard` of a run seeded with `seed`: same key, one
/// ChaCha stream per shard.
#[must_use]
pub fn shard_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(shard);
    r
}
