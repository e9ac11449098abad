//! Reproducible random streams.
//!
//! Every random quantity in the crate is derived from a 64-bit master seed
//! plus a small tuple of integer tags (domain, site code, frog index, trial
//! number, ...). Keys are built by folding the tags through a SplitMix64
//! finalizer, and each key seeds its own PCG-XSL-RR 128/64 stream with a
//! key-dependent increment, so distinct keys give non-overlapping sequences.
//!
//! Two properties the rest of the crate relies on:
//! - a stream is a pure function of its key, so a job can be replayed on any
//!   worker in any order;
//! - drawing more values only extends the sequence (prefix property), so a
//!   frog walked for `T + 1` steps repeats the first `T` steps exactly.

use rand::SeedableRng;
use rand_pcg::Pcg64;

pub type Stream = Pcg64;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Domain tags keep streams for unrelated purposes apart.
pub mod tag {
    pub const SITE_FIELD: u64 = 0x5349_5445;
    pub const FROG: u64 = 0x4652_4F47;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const RUN: u64 = 0x5255_4E00;
    pub const FIELD_SEED: u64 = 0x4649_454C;
    pub const FROG_SEED: u64 = 0x4652_5345;
    pub const BOOTSTRAP: u64 = 0x424F_4F54;
}

/// SplitMix64 finalizer: a bijective 64-bit avalanche mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `tags` into `seed`, one mixing round per tag.
#[inline]
pub fn derive_key(seed: u64, tags: &[u64]) -> u64 {
    let mut k = mix64(seed.wrapping_add(GOLDEN_GAMMA));
    for &t in tags {
        k = mix64(k ^ mix64(t.wrapping_add(GOLDEN_GAMMA)));
    }
    k
}

/// A fresh stream for a 64-bit key.
pub fn stream_for_key(key: u64) -> Stream {
    let state = ((mix64(key ^ 0xA076_1D64_78BD_642F) as u128) << 64)
        | mix64(key ^ 0xE703_7ED1_A0B4_28DB) as u128;
    let increment = ((mix64(key ^ 0x8EBC_6AF0_9C88_C6E3) as u128) << 64)
        | mix64(key ^ 0x5899_65CC_7537_4CC3) as u128;
    Pcg64::new(state, increment)
}

/// Stream for `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    stream_for_key(derive_key(seed, tags))
}

/// Seedable from a plain integer, for callers that only need "a stream".
pub fn stream_from_seed(seed: u64) -> Stream {
    Pcg64::seed_from_u64(seed)
}

/// Maps 64 random bits to the open interval (0, 1) on a grid of spacing 2^-52.
#[inline]
pub fn unit_open(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn mix_is_injective_on_a_sample() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..100_000u64 {
            assert!(seen.insert(mix64(i)));
        }
    }

    #[test]
    fn streams_replay_and_extend() {
        let mut a = stream(7, &[tag::FROG, 3, 1]);
        let mut b = stream(7, &[tag::FROG, 3, 1]);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..128).map(|_| b.next_u64()).collect();
        assert_eq!(xs[..], ys[..64]);
    }

    #[test]
    fn distinct_tags_give_distinct_streams() {
        let mut a = stream(7, &[tag::FROG, 3, 1]);
        let mut b = stream(7, &[tag::FROG, 3, 2]);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn unit_open_never_hits_endpoints() {
        assert!(unit_open(0) > 0.0);
        assert!(unit_open(u64::MAX) < 1.0);
    }
}
