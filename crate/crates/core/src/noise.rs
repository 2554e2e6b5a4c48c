//! Counter-based reproducible Gaussian noise.
//!
//! Every draw is addressed by `(seed, stream, purpose, step)`: a fresh
//! ChaCha8 generator is keyed from those four words, so parallel runs and
//! out-of-order replay produce identical noise regardless of execution
//! schedule.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a noise draw is for; part of the counter key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePurpose {
    InitState,
    Process,
    Measurement,
    /// Free-form auxiliary draws (benchmarks, perturbation sampling).
    Aux,
}

impl NoisePurpose {
    fn tag(self) -> u64 {
        match self {
            NoisePurpose::InitState => 0,
            NoisePurpose::Process => 1,
            NoisePurpose::Measurement => 2,
            NoisePurpose::Aux => 3,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Generator for one `(seed, stream, purpose, step)` address.
pub fn step_rng(seed: u64, stream: u64, purpose: NoisePurpose, step: u64) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for word in [stream, purpose.tag(), step] {
        state = splitmix64(state ^ splitmix64(word));
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// A standard-normal vector drawn from the given generator.
pub fn standard_normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}
