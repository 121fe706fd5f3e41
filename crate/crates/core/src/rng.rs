//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha20 keystream addressed by
//! `(seed, domain, index)`:
//!
//! * the 256-bit key is four SplitMix64 outputs started from
//!   `seed ^ (domain_tag * 0x9E3779B97F4A7C15)`;
//! * `index` selects the ChaCha stream (nonce), so sample `i` of a batch owns
//!   stream `i` and batch scoring does not depend on iteration order;
//! * uniforms take the top 53 bits of each `u64` word;
//! * Gaussians are produced by the inverse normal CDF applied to
//!   `(k + 0.5) / 2^53`, one word per draw.
//!
//! The construction only uses fixed-width integer arithmetic, so streams are
//! identical across platforms.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Separates the purposes random numbers are used for so that, e.g., the
/// dataset stream for seed 7 never coincides with the perturbation stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Data,
    Init,
    Shuffle,
    Sample,
    Embedder,
    React,
    Perturb,
    SpemNoise,
    Sweep,
    Lambda,
    Background,
    Gmm,
    Dequantize,
    MonteCarlo,
    Instances,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Data => 1,
            Domain::Init => 2,
            Domain::Shuffle => 3,
            Domain::Sample => 4,
            Domain::Embedder => 5,
            Domain::React => 6,
            Domain::Perturb => 7,
            Domain::SpemNoise => 8,
            Domain::Sweep => 9,
            Domain::Lambda => 10,
            Domain::Background => 11,
            Domain::Gmm => 12,
            Domain::Dequantize => 13,
            Domain::MonteCarlo => 14,
            Domain::Instances => 15,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes two words into one; used to derive sub-seeds (per repeat, per grid point).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut s = seed ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut s)
}

const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

pub struct Stream {
    inner: ChaCha20Rng,
}

impl Stream {
    pub fn new(seed: u64, domain: Domain, index: u64) -> Self {
        let mut sm = seed ^ domain.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut sm).to_le_bytes());
        }
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(index);
        Stream { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / TWO_POW_53
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / TWO_POW_53
    }

    /// Uniform integer in `0..n` (Lemire's widening multiply, no rejection).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u = self.open_uniform();
        standard_normal_quantile(u)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn standard_normal_quantile(u: f64) -> f64 {
    // `Normal::standard` cannot fail; the quantile of (0,1) inputs is finite.
    Normal::standard().inverse_cdf(u)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}
