//! Counter-based derivation of independent seeds from a master seed.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed number `counter` of the stream rooted at `master`.
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    mix(mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15))
        ^ counter.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
