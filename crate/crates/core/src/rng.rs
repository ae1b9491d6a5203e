//! Counter-based random streams.
//!
//! An [`RngState`] is a seed plus a counter. Each consumer (a dropout mask, a
//! Gumbel draw, a weight initializer) takes a fresh ChaCha stream keyed by
//! `(seed, counter)`, so results depend only on the seed and the sequence of
//! `stream()` calls, never on how many numbers an earlier consumer drew.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Next independent stream; advances the counter by one.
    pub fn stream(&mut self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.counter);
        self.counter += 1;
        rng
    }

    /// A child state with its own seed, derived from this seed and `tag`.
    /// Does not advance the parent.
    pub fn fork(&self, tag: u64) -> RngState {
        RngState::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw on the open interval (0, 1).
pub(crate) fn open_unit(rng: &mut impl rand::Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
