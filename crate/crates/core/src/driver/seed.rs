//! Stable seed splitting. Values must not change across releases or
//! platforms: fixtures and reruns depend on them.

/// FNV-1a, 64-bit.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a named purpose under `root`.
pub fn derive_seed(root: u64, purpose: &str) -> u64 {
    splitmix64(root ^ stable_hash(purpose.as_bytes()))
}
