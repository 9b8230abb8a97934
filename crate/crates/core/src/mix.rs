//! Seed derivation.
//!
//! Every per-card or per-cell random stream is seeded from
//! `mix(master, key)` so results never depend on evaluation order.

/// SplitMix64 finalizer.
pub fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a key.
///
/// `mix(s, k) = avalanche(s + golden * (k + 1))`, the SplitMix64 step taken
/// `k + 1` times from state `s`.
pub fn mix(seed: u64, key: u64) -> u64 {
    avalanche(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(key.wrapping_add(1))))
}
