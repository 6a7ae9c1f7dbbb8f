use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every seeded stream in the crate.
pub type Rng = ChaCha8Rng;

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream(base: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, stream))
}
