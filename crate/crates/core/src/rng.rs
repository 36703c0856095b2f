//! Labeled, splittable seed streams.
//!
//! Every random draw in a run descends from one master seed through a
//! `(label, index)` path, so adding trials never perturbs the graph or the
//! initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

pub type Rng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for a labeled sub-task.
    pub fn child(&self, label: &str) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(fnv1a(label.as_bytes()))),
        }
    }

    /// Child stream for the `index`-th replica of a sub-task.
    pub fn nth(&self, index: u64) -> Self {
        Self {
            seed: splitmix64(self.seed.wrapping_add(splitmix64(index.wrapping_add(1)))),
        }
    }

    pub fn rng(&self) -> Rng {
        Rng::seed_from_u64(self.seed)
    }
}

/// Draws `N(0, sigma²)` in `f64` and converts, so `f32` and `f64` runs see the same stream.
pub fn normal<T: Real>(rng: &mut Rng, sigma: T) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z) * sigma
}

pub fn uniform<T: Real>(rng: &mut Rng) -> T {
    use rand::Rng as _;
    T::lit(rng.gen::<f64>())
}
