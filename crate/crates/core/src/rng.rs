//! Seed derivation for reproducible, order-independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a seed and a list of labels. Unlike
/// `std::hash::DefaultHasher` this never changes between toolchains.
pub fn derive_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix(seed);
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        // separator so ["ab", "c"] and ["a", "bc"] differ
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix(h)
}

pub fn seeded(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Per-impression stream for a given epoch. Serial and parallel runs see
/// the same draws regardless of processing order.
pub fn impression_stream(seed: u64, epoch: u32, impression_id: &str) -> StreamRng {
    seeded(derive_seed(seed, &[b"impression", &epoch.to_le_bytes(), impression_id.as_bytes()]))
}

/// Named sub-stream (init, shuffling, synthesis ...).
pub fn named_stream(seed: u64, name: &str, index: u64) -> StreamRng {
    seeded(derive_seed(seed, &[name.as_bytes(), &index.to_le_bytes()]))
}
