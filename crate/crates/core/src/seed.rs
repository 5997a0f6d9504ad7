//! Seed derivation. Every random stream in the pipeline descends from one
//! top-level seed through labelled steps (`command -> module -> trial`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for the stream named `label` under `parent`.
pub fn derive(parent: u64, label: &str) -> u64 {
    // FNV-1a over the label
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(parent ^ splitmix64(h))
}

/// Child seed for the `index`-th item of a stream.
pub fn derive_index(parent: u64, index: u64) -> u64 {
    splitmix64(parent.wrapping_add(splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
