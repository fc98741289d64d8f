//! Deterministic random-stream derivation.
//!
//! Every stochastic operation in this crate takes an explicit `u64` seed and
//! derives one independent child stream per work item from `(seed, index)`.
//! Batches can therefore run on any number of threads and still produce
//! bit-identical results: a work item's stream never depends on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix a seed with a counter into a well-spread child seed (SplitMix64 finalizer).
///
/// Used to derive sub-seeds for nested batches (e.g. one seed per outer
/// calibration iteration, from which the inner Monte Carlo loop derives its
/// own per-draw streams).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for the `index`-th work item of a seeded batch.
///
/// ChaCha8 supports 2^64 independent streams per key, so items of one batch
/// get disjoint streams while the key stays a pure function of the seed.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
