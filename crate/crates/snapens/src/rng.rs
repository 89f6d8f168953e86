//! Seed fan-out. Every random choice in the pipeline draws from a stream
//! derived from the root seed and a label, so subsystems stay independent:
//! adding a draw in one place never shifts the sequence seen by another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Labels for the derived streams. The discriminant is mixed into the seed,
/// so reordering variants would change every stream; append only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DataSplit = 1,
    EvalNegatives = 2,
    BaseInit = 3,
    BaseShuffle = 4,
    NetInit = 5,
    NetShuffle = 6,
    Dropout = 7,
    TrainNegatives = 8,
    ValNegatives = 9,
    Synth = 10,
    BaseNegatives = 11,
    HseInit = 12,
    HseShuffle = 13,
}

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed for `stream`, optionally salted (epoch, model index...).
pub fn sub_seed(root: u64, stream: Stream, salt: u64) -> u64 {
    mix(mix(root ^ (stream as u64).wrapping_mul(0xa076_1d64_78bd_642f)) ^ salt)
}

/// RNG for a derived stream. ChaCha8 keeps draws identical on every platform.
pub fn stream_rng(root: u64, stream: Stream, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(root, stream, salt))
}

/// Per-example RNG, e.g. dropout masks: independent of batch order and
/// thread schedule, reproducible from (root, epoch, example index).
pub fn example_rng(root: u64, stream: Stream, epoch: u64, example: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(sub_seed(root, stream, epoch) ^ mix(example)))
}
