//! Seeded, splittable random streams.
//!
//! Every random quantity in the crate is derived from a [`Seed`]. Seeds form a
//! tree: `seed.child(k)` and `seed.named("tag")` give independent children, so
//! a consumer can be handed its own substream without caring about how many
//! draws other consumers make. A [`Seed`] also doubles as a counter-based
//! generator through [`Seed::unit_f64`], which the labeling oracle uses to key
//! label noise by query index.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Number of Monte-Carlo draws handled by one shard of a parallel estimator.
pub const SHARD_SIZE: usize = 1 << 15;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(u64);

impl Seed {
    pub const fn new(value: u64) -> Self {
        Seed(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    /// Child seed keyed by an integer (shard index, repetition index, ...).
    #[inline]
    pub fn child(self, key: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(key ^ 0x5851_F42D_4C95_7F2D)))
    }

    /// Child seed keyed by a label. FNV-1a over the bytes, then [`Seed::child`].
    pub fn named(self, label: &str) -> Seed {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    /// Counter-based uniform draw in `[0, 1)`: a pure function of the seed.
    #[inline]
    pub fn unit_f64(self) -> f64 {
        (splitmix64(self.0 ^ 0xD1B5_4A32_D192_ED03) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Sequential stream rooted at this seed.
    pub fn stream(self) -> SeededStream {
        SeededStream(ChaCha8Rng::seed_from_u64(self.0))
    }
}

/// ChaCha8 stream owned by exactly one consumer.
#[derive(Debug, Clone)]
pub struct SeededStream(ChaCha8Rng);

impl RngCore for SeededStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    #[inline]
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Splits `n` draws into shards of [`SHARD_SIZE`], runs `f(stream, count)` on
/// each shard in parallel and returns the per-shard results in shard order.
///
/// The shard layout depends only on `n`, so results are identical for any
/// thread count.
pub fn sharded<T, F>(seed: Seed, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(SeededStream, usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let shards = n.div_ceil(SHARD_SIZE);
    (0..shards)
        .into_par_iter()
        .map(|k| {
            let count = if k + 1 == shards { n - k * SHARD_SIZE } else { SHARD_SIZE };
            f(seed.child(k as u64).stream(), count)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_are_distinct_and_stable() {
        let s = Seed::new(7);
        assert_eq!(s.child(3), s.child(3));
        assert_ne!(s.child(3), s.child(4));
        assert_ne!(s.named("psgd"), s.named("sign"));
        assert_eq!(Seed::new(7).named("x").value(), s.named("x").value());
    }

    #[test]
    fn unit_draws_are_in_range_and_roughly_uniform() {
        let s = Seed::new(11);
        let n = 100_000;
        let mut sum = 0.0;
        for i in 0..n {
            let u = s.child(i).unit_f64();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        // stderr of a uniform mean is sqrt(1/12/n) ~ 9.1e-4
        assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12.0 / n as f64).sqrt());
    }

    #[test]
    fn sharding_covers_every_draw_once() {
        let counts = sharded(Seed::new(1), 3 * SHARD_SIZE + 17, |_, c| c);
        assert_eq!(counts, vec![SHARD_SIZE, SHARD_SIZE, SHARD_SIZE, 17]);
        assert!(sharded(Seed::new(1), 0, |_, c| c).is_empty());
    }
}
