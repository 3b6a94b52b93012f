//! Keyed hashing and seed derivation.
//!
//! Everything random in this crate is a deterministic function of a caller
//! supplied master seed.  Sub-seeds are derived with a purpose tag plus
//! integer parts, so independent consumers (level sampling, fingerprints,
//! per-trial RNGs, per-block RNGs, ...) never share a hash stream by
//! accident.  The mixer is the splitmix64 finalizer, which is cheap and has
//! full avalanche; the frequency tests in `sketch` keep it honest.

/// splitmix64 finalizer.  Bijective on u64.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Keyed 64-bit hash of a single word.  Two mixing rounds with the key
/// folded in twice, so related keys do not produce related streams.
#[inline]
pub fn keyed(key: u64, x: u64) -> u64 {
    mix64(mix64(x ^ key) ^ key.rotate_left(23))
}

/// Derive a sub-seed from `master`, an ASCII purpose tag and integer parts.
pub fn derive_seed(master: u64, tag: &str, parts: &[u64]) -> u64 {
    // FNV-1a over the tag bytes gives a stable per-purpose constant.
    let mut t: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in tag.as_bytes() {
        t ^= b as u64;
        t = t.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut s = keyed(master, t);
    for &p in parts {
        s = keyed(s, p);
    }
    s
}

/// Geometric level of an item under the given key: `level_of` returns g with
/// Pr[g >= i] = 2^-i, capped at `max_level`.  An item "survives" levels
/// 0..=g, which gives the nested subsampling the sketches rely on.
#[inline]
pub fn level_of(key: u64, item: u64, max_level: u16) -> u16 {
    let g = keyed(key, item).leading_zeros() as u16;
    g.min(max_level)
}

/// `bits`-bit keyed fingerprint of an item (1..=64 bits).
#[inline]
pub fn fingerprint(key: u64, item: u64, bits: u8) -> u64 {
    debug_assert!((1..=64).contains(&bits));
    let h = keyed(key ^ 0xa5a5_a5a5_5a5a_5a5a, item);
    if bits == 64 {
        h
    } else {
        h & ((1u64 << bits) - 1)
    }
}

/// Order-sensitive 64-bit digest of a word stream.  Used for instance
/// digests in sidecar metadata; not cryptographic.
pub fn digest64(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut d: u64 = 0x5bd1_e995_9d1b_54a9;
    for (i, w) in words.into_iter().enumerate() {
        d = keyed(d, w ^ mix64(i as u64));
    }
    mix64(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix64_is_deterministic_and_spreads() {
        assert_eq!(mix64(0), mix64(0));
        assert_ne!(mix64(0), mix64(1));
        // Adjacent inputs should differ in roughly half the bits.
        let d = (mix64(41) ^ mix64(42)).count_ones();
        assert!((16..=48).contains(&d), "poor avalanche: {d} bits");
    }

    #[test]
    fn derive_seed_separates_tags_and_parts() {
        let m = 123456789;
        assert_ne!(derive_seed(m, "lvl", &[0]), derive_seed(m, "fp", &[0]));
        assert_ne!(derive_seed(m, "lvl", &[0]), derive_seed(m, "lvl", &[1]));
        assert_ne!(derive_seed(m, "lvl", &[]), derive_seed(m, "lvl", &[0]));
        assert_eq!(derive_seed(m, "lvl", &[7, 9]), derive_seed(m, "lvl", &[7, 9]));
    }

    #[test]
    fn level_respects_cap() {
        for item in 0..1000 {
            assert!(level_of(99, item, 5) <= 5);
        }
    }

    #[test]
    fn level_frequencies_match_geometric_law() {
        // Pr[level >= 3] = 1/8; estimated over 10^6 items.
        let key = derive_seed(0xfeed, "lvl", &[0]);
        let mut hits = 0u32;
        let trials = 1_000_000;
        for item in 0..trials {
            if level_of(key, item, 63) >= 3 {
                hits += 1;
            }
        }
        let frac = hits as f64 / trials as f64;
        assert!((frac - 0.125).abs() < 0.002, "Pr[g>=3] = {frac}");
    }

    #[test]
    fn fingerprint_masks_to_width() {
        for bits in [1u8, 7, 32, 63] {
            let v = fingerprint(5, 77, bits);
            assert!(v < (1u64 << bits));
        }
        // Full width does not get masked away.
        assert_ne!(fingerprint(5, 77, 64), 0);
    }
}
