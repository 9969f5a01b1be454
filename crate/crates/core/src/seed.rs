//! Seed derivation for independent random streams.
//!
//! Every stream (client selection in round `t`, batch shuffling for client
//! `k` in round `t`, ...) gets its own seed derived from the run seed, so the
//! result does not depend on the order in which streams are consumed.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`, one splitmix64 round per part.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| {
            splitmix64(acc.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ splitmix64(p))
        })
}

/// Stream tags, kept distinct from client ids.
pub(crate) const SELECTION: u64 = u64::MAX;
pub(crate) const CENTRAL: u64 = u64::MAX - 1;
