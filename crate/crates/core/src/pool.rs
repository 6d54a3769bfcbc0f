//! Fixed-capacity buffer of previously generated images used to
//! stabilize discriminator updates.

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// While filling, every fake is stored and returned unchanged. Once full,
/// each query swaps the fake against a uniformly chosen stored image with
/// probability one half.
pub struct ImagePool {
    capacity: usize,
    buffer: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl ImagePool {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ImagePool { capacity, buffer: Vec::with_capacity(capacity), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn query(&mut self, fake: Tensor) -> Tensor {
        if self.capacity == 0 {
            return fake;
        }
        if self.buffer.len() < self.capacity {
            self.buffer.push(fake.clone());
            return fake;
        }
        if self.rng.gen_bool(0.5) {
            let idx = self.rng.gen_range(0..self.buffer.len());
            let out = self.buffer[idx].clone();
            self.buffer[idx] = fake;
            out
        } else {
            fake
        }
    }
}
