//! Counter-based Gaussian noise streams.
//!
//! Every random number in the crate is a pure function of
//! `(master seed, purpose, replica, substream, draw index)`. Substreams are
//! ChaCha8 streams, so a particle's driver is identical whether it is
//! simulated inside an ensemble of 100 or 6400 particles, sequentially or
//! in parallel, and any increment can be regenerated by random access
//! instead of being stored.
//!
//! Normal variates use Box-Muller on fixed-width 53-bit uniforms: exactly
//! two `u64` draws per pair of normals, which keeps the word layout of a
//! stream addressable by counter.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Disjoint stream families hanging off one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Brownian micro-increments driving the particle system.
    Increments,
    /// Initial-condition sampling.
    InitialLaw,
    /// Auxiliary Monte Carlo draws (toy models, probes).
    Auxiliary,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Increments => 0x11,
            Purpose::InitialLaw => 0x22,
            Purpose::Auxiliary => 0x33,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, purpose: Purpose, replica: u64) -> [u8; 32] {
    let w0 = splitmix(seed);
    let w1 = splitmix(w0 ^ purpose.tag());
    let w2 = splitmix(w1 ^ replica);
    let w3 = splitmix(w2);
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&w0.to_le_bytes());
    key[8..16].copy_from_slice(&w1.to_le_bytes());
    key[16..24].copy_from_slice(&w2.to_le_bytes());
    key[24..32].copy_from_slice(&w3.to_le_bytes());
    key
}

#[inline]
fn unit_open(x: u64) -> f64 {
    // (0, 1), 53 significant bits, never exactly 0 or 1.
    ((x >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

#[inline]
fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// A keyed family of independent normal substreams.
#[derive(Debug, Clone)]
pub struct NoiseField {
    key: [u8; 32],
}

impl NoiseField {
    pub fn new(seed: u64, purpose: Purpose, replica: u64) -> Self {
        NoiseField {
            key: derive_key(seed, purpose, replica),
        }
    }

    /// Sequential cursor over substream `stream`, starting at normal 0.
    pub fn stream(&self, stream: u64) -> NormalStream {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream);
        NormalStream { rng, pending: None }
    }

    /// Random access: fills `out` with the standard normals of substream
    /// `stream` starting at normal index `start`. Bit-identical to the
    /// sequential cursor.
    pub fn normals_at(&self, stream: u64, start: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream);
        // One Box-Muller pair consumes two u64 draws = four 32-bit words.
        rng.set_word_pos((start / 2) as u128 * 4);
        let mut cursor = NormalStream { rng, pending: None };
        if start % 2 == 1 {
            let _ = cursor.next();
        }
        cursor.fill(out);
    }
}

/// Sequential standard-normal generator over one substream.
pub struct NormalStream {
    rng: ChaCha8Rng,
    pending: Option<f64>,
}

impl NormalStream {
    /// Next standard normal. Normal index `k` always lives in Box-Muller
    /// pair `k / 2`, which is what makes random access possible.
    #[inline]
    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.pending.take() {
            return z;
        }
        let u1 = unit_open(self.rng.next_u64());
        let u2 = unit_open(self.rng.next_u64());
        let (z0, z1) = box_muller(u1, u2);
        self.pending = Some(z1);
        z0
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for slot in out.iter_mut() {
            *slot = self.next();
        }
    }

    /// Standard Cauchy variate (two normals are consumed to keep the
    /// counter layout uniform; their ratio is Cauchy).
    #[inline]
    pub fn next_cauchy(&mut self) -> f64 {
        let a = self.next();
        let mut b = self.next();
        if b == 0.0 {
            b = f64::MIN_POSITIVE;
        }
        a / b
    }
}
