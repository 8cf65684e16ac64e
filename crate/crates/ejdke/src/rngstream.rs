//! Deterministic derivation of independent RNG streams for parallel Monte Carlo.
//!
//! Each (master seed, index path) pair maps to its own ChaCha stream, so
//! replications can be farmed out to any number of workers and still produce
//! results that are independent of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, used only for seed derivation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a path of indices into a single derived 64-bit seed.
pub fn derive_seed(master_seed: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master_seed ^ 0x6a09_e667_f3bc_c908);
    for (depth, &component) in path.iter().enumerate() {
        state = splitmix64(state ^ splitmix64(component.wrapping_add(depth as u64 + 1)));
    }
    state
}

/// Derive a generator for the stream identified by `path` under `master_seed`.
///
/// The path components are mixed in order, so `derive(s, &[i, j])` and
/// `derive(s, &[j, i])` are distinct streams for `i != j`.
pub fn derive(master_seed: u64, path: &[u64]) -> ChaCha8Rng {
    let state = derive_seed(master_seed, path);
    let mut seed = [0u8; 32];
    let mut z = state;
    for chunk in seed.chunks_exact_mut(8) {
        z = splitmix64(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
