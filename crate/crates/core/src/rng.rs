//! Seeded generators and deterministic sub-seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a path of integers (epoch, item index, stream tag...)
/// into an independent sub-seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Generator for `derive(base, path)`.
pub fn sub_rng(base: u64, path: &[u64]) -> Rng {
    seeded(derive(base, path))
}

// Stream tags keep sub-seeds for different purposes apart.
pub(crate) const TAG_SHUFFLE: u64 = 0x5348_5546;
pub(crate) const TAG_AUGMENT: u64 = 0x4155_474D;
pub(crate) const TAG_GUMBEL: u64 = 0x4755_4D42;
pub(crate) const TAG_INIT: u64 = 0x494E_4954;
pub(crate) const TAG_EVAL: u64 = 0x4556_414C;
pub(crate) const TAG_PRETRAIN: u64 = 0x5052_4554;
pub(crate) const TAG_SUBSAMPLE: u64 = 0x5355_4253;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_separates_paths() {
        assert_ne!(derive(1, &[0, 1]), derive(1, &[1, 0]));
        assert_ne!(derive(1, &[0]), derive(2, &[0]));
        assert_eq!(derive(7, &[3, 4]), derive(7, &[3, 4]));
    }
}
