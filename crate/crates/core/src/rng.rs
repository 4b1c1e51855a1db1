//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 keystream. The 256-bit key is
//! `seed.to_le_bytes() ‖ domain.to_le_bytes() ‖ [0u8; 16]` and the 64-bit
//! ChaCha stream id selects the sub-sequence (path index, epoch, tensor).
//! Streams are therefore independent of evaluation order and worker count.
//!
//! Uniforms on `[0, 1)` are `(next_u64() >> 11) * 2^-53`. Standard normals
//! use the basic Box-Muller transform on a pair of uniforms `(u1, u2)`:
//! `r = sqrt(-2 ln(1 - u1))`, `z1 = r cos(2π u2)`, `z2 = r sin(2π u2)`,
//! emitted in that order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Key domains keep streams for different purposes disjoint under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Paths = 0,
    Init = 1,
    Shuffle = 2,
    Orthogonal = 3,
}

pub fn stream(seed: u64, domain: Domain, stream_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id);
    rng
}

#[inline]
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Box-Muller normal generator over a keyed stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, domain: Domain, stream_id: u64) -> Self {
        Self {
            rng: stream(seed, domain, stream_id),
            spare: None,
        }
    }

    pub fn next_pair(&mut self) -> (f64, f64) {
        let u1 = uniform(&mut self.rng);
        let u2 = uniform(&mut self.rng);
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        (r * angle.cos(), r * angle.sin())
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (z1, z2) = self.next_pair();
        self.spare = Some(z2);
        z1
    }

    pub fn next_uniform(&mut self) -> f64 {
        uniform(&mut self.rng)
    }
}
