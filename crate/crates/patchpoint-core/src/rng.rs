//! Deterministic child-RNG derivation.
//!
//! Every randomized stage derives its own generator from (master seed, stream
//! id, index...) so that regenerating record i never depends on how many
//! records were drawn before it, and resumed runs replay bit-identically.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed stream ids. Keeping them in one place guarantees two stages never
/// collide on the same child seed.
pub mod stream {
    pub const SYNTH: u64 = 0x01;
    pub const BACKGROUND: u64 = 0x02;
    pub const TRAIN_SHUFFLE: u64 = 0x03;
    pub const TRAIN_AUGMENT: u64 = 0x04;
    pub const INIT: u64 = 0x05;
    pub const EVAL_DEGRADE: u64 = 0x06;
    pub const SWEEP_SCENE: u64 = 0x07;
}

/// Derives a child generator from the master seed, a stream id, and up to two
/// indices. The four words fill the 32-byte ChaCha seed directly, so distinct
/// inputs give distinct, uncorrelated streams.
pub fn child_rng(master_seed: u64, stream: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&stream.to_le_bytes());
    seed[16..24].copy_from_slice(&a.to_le_bytes());
    seed[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}
