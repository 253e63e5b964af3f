//! Deterministic sub-seed derivation.
//!
//! Every randomized stage of the pipeline draws its own seed from the
//! single run seed through this function, so stages can be re-run or
//! reordered without perturbing each other.

/// Derive a sub-seed from a master seed and a stage label.
///
/// Mixes the label bytes into the seed with the SplitMix64 finalizer, which
/// gives well-spread seeds even for adjacent inputs.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = master ^ 0x9e37_79b9_7f4a_7c15;
    for &b in label.as_bytes() {
        h = splitmix64(h ^ b as u64);
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
