//! Deterministic seed splitting.
//!
//! Every stochastic stage draws its seed from `(master, stage, index)` so that
//! results do not depend on the order in which concurrent tasks run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `index` within `stage` under `master`.
///
/// FNV-1a over the stage name, mixed with the master seed and index through
/// splitmix64 finalizers.
pub fn derive(master: u64, stage: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h) ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_separates_stages_and_indices() {
        let a = derive(1, "shadow", 0);
        assert_eq!(a, derive(1, "shadow", 0));
        assert_ne!(a, derive(1, "shadow", 1));
        assert_ne!(a, derive(1, "owner", 0));
        assert_ne!(a, derive(2, "shadow", 0));
    }
}
