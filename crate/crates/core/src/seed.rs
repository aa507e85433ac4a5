use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Expands a run seed into an independent per-stage seed.
pub fn derive(seed: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, then a splitmix64 finaliser.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut x = seed ^ h;
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn rng(seed: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stage))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_get_distinct_seeds() {
        assert_ne!(derive(1, "init"), derive(1, "shuffle"));
        assert_ne!(derive(1, "init"), derive(2, "init"));
        assert_eq!(derive(7, "x"), derive(7, "x"));
    }
}
