//! Seed derivation and the random streams used by growth and measurement noise.
//!
//! Every random quantity in a run descends from one global seed. Each
//! consumer asks for its own stream with [`derive_seed`], so adding a consumer
//! never perturbs the others:
//!
//! | stream                   | consumer                                |
//! |--------------------------|-----------------------------------------|
//! | `STREAM_GROWTH + i`      | growth of the i-th topology in a cell   |
//! | `STREAM_NOISE + r`       | read noise of replicate `r`             |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STREAM_GROWTH: u64 = 0x1000;
pub const STREAM_NOISE: u64 = 0x2000;

/// SplitMix64 finalizer applied to `global ^ stream`-mixed input.
pub fn derive_seed(global: u64, stream: u64) -> u64 {
    let mut z = global.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random stream.
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal deviate (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }
}
