//! Seeded random streams.
//!
//! A run owns a single `run_seed`. Each consumer draws from its own ChaCha8
//! stream so that, for example, changing the exploration rate never perturbs
//! the Q-table initialisation:
//!
//! | stream    | id | used by                                          |
//! |-----------|----|--------------------------------------------------|
//! | `QInit`   | 1  | sub-seed handed to [`crate::rl::init_qtable`]    |
//! | `Actions` | 2  | ε-greedy draws during training and runs          |
//!
//! Grid generation is seeded separately by the grid's own seed; attempt `k`
//! of [`crate::env::generate_grid`] reads ChaCha stream `k` of that seed.
//!
//! Sub-seeds are derived with SplitMix64 so that neighbouring run seeds give
//! unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    QInit = 1,
    Actions = 2,
}

/// One SplitMix64 output for `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for `stream` under `run_seed`.
pub fn derive_seed(run_seed: u64, stream: Stream) -> u64 {
    splitmix64(run_seed ^ splitmix64(stream as u64))
}

/// Generator for `stream` under `run_seed`.
pub fn stream_rng(run_seed: u64, stream: Stream) -> Rng {
    let mut rng = Rng::seed_from_u64(run_seed);
    rng.set_stream(stream as u64);
    rng
}

/// Plain generator seeded directly from `seed` (stream 0).
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
