//! Seed derivation for independent, reproducible random streams.

/// One round of the splitmix64 mixer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a sequence of context tags.
///
/// Distinct tag sequences yield statistically independent seeds, so each
/// (cell, generation, offspring, purpose) combination gets its own stream.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ 0x6a09_e667_f3bc_c908);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}
