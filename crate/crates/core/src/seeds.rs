//! Counter-based seed derivation so independent random streams can be split
//! off a master seed without consuming from each other.

/// SplitMix64 finaliser.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the child stream `label` of `parent`.
pub fn derive(parent: u64, label: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ label.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Seed for a path of labels, applied left to right.
pub fn derive_path(parent: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(parent, |s, &l| derive(s, l))
}

/// Uniform value in `[0, 1)` from a seed.
pub fn unit_f64(seed: u64) -> f64 {
    (splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64
}
