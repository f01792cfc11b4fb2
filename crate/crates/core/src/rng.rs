//! Splittable, counter-based random streams.
//!
//! Every stochastic component draws from a [`Streams`] node addressed by a
//! path of integers (purpose tag, iteration, point index, ...). The path is
//! hashed into a ChaCha key, so a stream depends only on the master seed and
//! its address, never on the order in which other streams were consumed.
//! This is what makes results independent of the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator used for every sampler in the crate.
pub type StreamRng = ChaCha8Rng;

/// Well-known first-level stream tags.
pub mod purpose {
    pub const DATASET: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const PROBE: u64 = 4;
    pub const CERTIFY: u64 = 5;
    pub const LIPSCHITZ: u64 = 6;
    pub const BOUND: u64 = 7;
    pub const ORACLE: u64 = 8;
    pub const ABSORPTION: u64 = 9;
    pub const STAGE: u64 = 10;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn mix(h: u64, v: u64) -> u64 {
    let mut s = h ^ v.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    splitmix64(&mut s) ^ h.rotate_left(23)
}

/// A node in the stream tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Streams {
    seed: u64,
    node: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            node: mix(0x005E_ED0F_D0D0, seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child node addressed by `index`.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            node: mix(self.node, index),
        }
    }

    /// Child addressed by a multi-level path.
    pub fn at(&self, path: &[u64]) -> Self {
        path.iter().fold(*self, |s, &i| s.child(i))
    }

    /// Fresh generator for this node.
    pub fn rng(&self) -> StreamRng {
        let mut state = self.node ^ self.seed.rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_path_same_stream() {
        let s = Streams::new(42);
        let a: Vec<u64> = (0..8)
            .map(|_| 0)
            .scan(s.at(&[3, 7]).rng(), |r, _| Some(r.random()))
            .collect();
        let b: Vec<u64> = (0..8)
            .map(|_| 0)
            .scan(s.child(3).child(7).rng(), |r, _| Some(r.random()))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sibling_streams_differ() {
        let s = Streams::new(42);
        let x: u64 = s.child(1).rng().random();
        let y: u64 = s.child(2).rng().random();
        let z: u64 = Streams::new(43).child(1).rng().random();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn sibling_uniforms_uncorrelated() {
        let s = Streams::new(7);
        let n = 20_000;
        let (mut sxy, mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let x: f64 = s.at(&[1, i]).rng().random();
            let y: f64 = s.at(&[2, i]).rng().random();
            sxy += x * y;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx / nf * sy / nf;
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        assert!(corr.abs() < 0.03, "corr {corr}");
    }
}
