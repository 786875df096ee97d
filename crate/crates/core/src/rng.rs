//! Reproducible stream-splitting RNG.
//!
//! Every replica (and every independent purpose within a replica: path
//! steps, clocks, marks, drivers) gets its own ChaCha8 stream whose seed is
//! derived by hashing `(root seed, stream id)` through splitmix64. Streams
//! never overlap and results are independent of thread scheduling: replicas
//! are always reduced in index order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand::Rng;

/// splitmix64 finalizer; bijective on u64.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Root of a family of independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    root: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { root: seed }
    }

    /// Unique stream id for (replica, purpose).
    pub fn stream_id(&self, replica: u64, purpose: u64) -> u64 {
        splitmix64(self.root ^ splitmix64(replica.wrapping_mul(2) ^ purpose.rotate_left(32)))
    }

    /// A ChaCha8 generator dedicated to (replica, purpose).
    pub fn rng(&self, replica: u64, purpose: u64) -> ChaCha8Rng {
        let id = self.stream_id(replica, purpose);
        let mut seed = [0u8; 32];
        let mut state = self.root ^ id;
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Stream purposes, kept distinct so that modular and fused pipelines draw
/// identical randomness for the same replica.
pub mod purpose {
    pub const PATH: u64 = 1;
    pub const CLOCK: u64 = 2;
    pub const MARKS: u64 = 3;
    pub const DRIVERS: u64 = 4;
    pub const FLOW: u64 = 5;
    pub const CELLS: u64 = 6;
}

/// Unit-rate exponential draw.
pub fn exp1<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(rand_distr::Exp1)
}

/// Walker alias table for O(1) draws from a finite weighted set.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
    total: f64,
}

impl AliasTable {
    /// Build from non-negative weights (not necessarily normalized).
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        assert!(n > 0 && n < u32::MAX as usize);
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "alias table needs positive total weight");
        let scale = n as f64 / total;
        let mut prob: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small: Vec<u32> = Vec::new();
        let mut large: Vec<u32> = Vec::new();
        for (i, &p) in prob.iter().enumerate() {
            if p < 1.0 {
                small.push(i as u32);
            } else {
                large.push(i as u32);
            }
        }
        while let (Some(s), Some(l)) = (small.pop(), large.pop()) {
            alias[s as usize] = l;
            prob[l as usize] -= 1.0 - prob[s as usize];
            if prob[l as usize] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        for i in small.into_iter().chain(large) {
            prob[i as usize] = 1.0;
        }
        AliasTable { prob, alias, total }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}
