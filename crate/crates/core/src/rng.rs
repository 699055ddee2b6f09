//! Seedable, checkpointable random number generation.

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier written into checkpoints next to the generator state.
pub const ALGORITHM: &str = "xoshiro256++";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededRng {
    algorithm: String,
    generator: Xoshiro256PlusPlus,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            algorithm: ALGORITHM.to_string(),
            generator: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn algorithm(&self) -> &str {
        &self.algorithm
    }

    /// Validates a deserialized generator.
    pub fn check_algorithm(&self) -> Result<()> {
        if self.algorithm == ALGORITHM {
            Ok(())
        } else {
            Err(Error::config(format!(
                "checkpoint PRNG `{}` is not supported (expected `{ALGORITHM}`)",
                self.algorithm
            )))
        }
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.generator.gen_range(lo..hi)
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.generator.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.generator.gen_range(0..n)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.generator.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.generator.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.generator.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.generator.try_fill_bytes(dest)
    }
}
