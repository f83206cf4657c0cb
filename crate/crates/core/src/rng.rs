//! Deterministic per-trace seeding.
//!
//! Every trace draws from its own ChaCha8 generator whose 64-bit seed is
//!
//! ```text
//! trace_seed(master, stream, index) = mix(mix(mix(master) ^ stream) ^ index)
//! ```
//!
//! where `mix` is the SplitMix64 finalizer. A *stream* identifies one batch
//! within a run (an estimation batch, a CE iteration, a restart candidate),
//! so results never depend on which worker simulated which trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TraceRng = ChaCha8Rng;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn trace_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(mix64(master) ^ stream) ^ index)
}

pub fn rng_from_seed(seed: u64) -> TraceRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags used by the estimation and optimisation drivers.
pub mod streams {
    /// Stand-alone MC/IS estimation batches.
    pub const ESTIMATE: u64 = 0;
    /// CE iteration `j` uses `CE_ITERATION + j`.
    pub const CE_ITERATION: u64 = 1 << 32;
    /// Retry of CE iteration `j` with a doubled batch.
    pub const CE_RETRY: u64 = 2 << 32;
    /// Traces of restart candidate `r` during the initial search.
    pub const INITIAL_TRACES: u64 = 3 << 32;
    /// Draw of restart candidate `r`'s parameters.
    pub const INITIAL_DRAW: u64 = 4 << 32;
    /// Final importance-sampling batch after optimisation.
    pub const FINAL_ESTIMATE: u64 = 5 << 32;
}
