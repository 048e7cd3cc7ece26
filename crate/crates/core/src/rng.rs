//! Deterministic random-stream plumbing.
//!
//! Every stochastic component owns its own ChaCha stream derived from
//! `(seed, stream id)`, so lazily extending one history never perturbs
//! another and trajectories replay bit-for-bit from a seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Named stream ids. Keeping them in one place avoids accidental collisions.
pub mod stream {
    pub const SP_PROFILES: u64 = 1;
    pub const POSITIONS: u64 = 2;
    pub const DAG_EDGES: u64 = 3;
    pub const TOKEN_INIT: u64 = 4;
    pub const NET_INIT: u64 = 10;
    pub const ACTION_SAMPLING: u64 = 11;
    pub const UPDATE_NOISE: u64 = 12;
    pub const BUFFER_SAMPLING: u64 = 13;
    pub const POLICY_EVAL: u64 = 14;
    /// Base id for per-SP token chains; SP `u` uses `TOKEN_CHAIN_BASE + u`.
    pub const TOKEN_CHAIN_BASE: u64 = 1_000;
    /// Base id for per-directed-link fading; link `idx` uses `FADING_BASE + idx`.
    pub const FADING_BASE: u64 = 10_000;
}

/// A ChaCha rng positioned on an independent stream of the given seed.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// One standard-normal draw (Box–Muller on two uniform draws).
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand::RngExt;
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A vector of independent standard-normal draws.
pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Mixes a seed with a tag (splitmix64 finalizer), used to derive
/// per-episode sub-seeds from an environment seed.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
