//! Reproducible random streams.
//!
//! Every stochastic component draws from [`StreamRng`], a ChaCha20 block
//! generator keyed by a 64-bit seed and addressed by a 64-bit stream index.
//! The key is the seed in little-endian order followed by 24 zero bytes; the
//! stream index selects the ChaCha nonce. Any ChaCha20 implementation given
//! `(seed, stream)` reproduces the exact word sequence, so paths and samples
//! can be sharded by index without depending on the worker count.
//!
//! Uniforms take the top 53 bits of a `u64` word. Normals use the Marsaglia
//! polar method, which yields two independent variates per accepted pair.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Identifier written into reports so streams can be regenerated elsewhere.
pub const RNG_ALGORITHM: &str = "chacha20;key=seed_u64_le||zeros24;nonce=stream_u64;uniform=top53;normal=marsaglia_polar";

/// Domain separation constants mixed into seeds for independent purposes.
pub mod purpose {
    pub const HESTON: u64 = 0x4845_5354_4f4e_0001;
    pub const INIT: u64 = 0x494e_4954_0000_0002;
    pub const SAMPLE: u64 = 0x5341_4d50_4c45_0003;
    pub const SVD_SKETCH: u64 = 0x534b_4554_4348_0004;
    pub const BOOTSTRAP: u64 = 0x424f_4f54_0000_0005;
    pub const BATCH: u64 = 0x4241_5443_4800_0006;
}

/// Derive a child seed from a parent seed and a label (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based generator for one `(seed, stream)` pair.
#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha20Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Two independent standard normals.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                return (u * f, v * f);
            }
        }
    }

    /// Uniform integer in `0..n` by rejection (no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }
}
