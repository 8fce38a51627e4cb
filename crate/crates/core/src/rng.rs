//! Keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose key is derived from
//! `(master_seed, replicate)` and whose stream id selects an independent
//! counter space, so replicate `r` draws the same numbers regardless of which
//! worker runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream ids, kept in one place so no two consumers share a stream.
pub mod stream {
    pub const COVARIATES: u64 = 1;
    pub const INSTRUMENT: u64 = 2;
    pub const LATENT: u64 = 3;
    pub const STRATUM: u64 = 4;
    pub const OUTCOME: u64 = 5;
    pub const REJECTION: u64 = 6;
    pub const NUISANCE_MC: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const TRUTH: u64 = 9;
    pub const EVAL: u64 = 10;
    pub const ORACLE_SAMPLE: u64 = 11;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// RNG for `(master_seed, replicate, stream_id)`.
pub fn keyed(master_seed: u64, replicate: u64, stream_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut s = splitmix(master_seed ^ 0x5EED);
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        s = splitmix(s ^ replicate.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(i as u64));
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id);
    rng
}
