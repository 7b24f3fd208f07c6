//! Deterministic pseudo-random number generation.
//!
//! All randomized pieces of the simulator (data generation, RandK/PermK
//! draws, Bernoulli sync decisions) draw from a SplitMix64 generator. The
//! state transition is `state += 0x9E3779B97F4A7C15` followed by a fixed
//! 64-bit finalizer, which makes every stream bit-reproducible across
//! platforms, runs and thread counts. Gaussian variates use the Box-Muller
//! transform (cosine branch, one variate per uniform pair, no carried
//! state), so the draw sequence depends only on the call sequence.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a stateless avalanche of one 64-bit word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of an independent child stream from a parent seed and a
/// stream label. Used for the problem/server/per-worker stream split and
/// for the harness cell-seed policy.
#[inline]
pub fn child_seed(seed: u64, label: u64) -> u64 {
    mix64(seed ^ mix64(label))
}

/// Label of the problem-generation stream.
pub const PROBLEM_STREAM: u64 = 0x01;
/// Label of the server stream (Bernoulli draws, shared compressor draws).
pub const SERVER_STREAM: u64 = 0x02;

/// Label of worker `i`'s private stream (independent compressor draws).
#[inline]
pub fn worker_stream(i: usize) -> u64 {
    0x1000 + i as u64
}

/// Seedable deterministic generator.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Child stream of `seed` under `label` (see [`child_seed`]).
    pub fn child(seed: u64, label: u64) -> Self {
        Rng::new(child_seed(seed, label))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)` (multiply-shift reduction).
    #[inline]
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal variate via Box-Muller. The first uniform lives in
    /// `(0, 1]` so the logarithm is always finite.
    pub fn gauss(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates permutation of `0..d`.
    pub fn permutation(&mut self, d: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..d).collect();
        for i in 0..d.saturating_sub(1) {
            let j = i + self.below(d - i);
            pool.swap(i, j);
        }
        pool
    }

    /// Uniform size-`k` subset of `0..d` without replacement (partial
    /// Fisher-Yates), returned sorted ascending.
    pub fn subset(&mut self, d: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= d);
        let mut pool: Vec<usize> = (0..d).collect();
        for i in 0..k {
            let j = i + self.below(d - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool.sort_unstable();
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn child_streams_differ_by_label() {
        let mut a = Rng::child(7, PROBLEM_STREAM);
        let mut b = Rng::child(7, SERVER_STREAM);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(3);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = Rng::new(9);
        for bound in [1usize, 2, 3, 17, 1000] {
            for _ in 0..1000 {
                assert!(rng.below(bound) < bound);
            }
        }
    }

    #[test]
    fn permutation_is_a_bijection() {
        let mut rng = Rng::new(11);
        for d in [1usize, 2, 5, 64] {
            let mut p = rng.permutation(d);
            p.sort_unstable();
            assert_eq!(p, (0..d).collect::<Vec<_>>());
        }
    }

    #[test]
    fn subset_is_sorted_and_distinct() {
        let mut rng = Rng::new(13);
        for _ in 0..100 {
            let s = rng.subset(20, 7);
            assert_eq!(s.len(), 7);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&i| i < 20));
        }
    }

    #[test]
    fn subset_distribution_is_uniform() {
        // Chi-square style sanity check: each index of 0..6 should appear in
        // a size-2 subset with probability 2/6.
        let mut rng = Rng::new(17);
        let mut counts = [0usize; 6];
        let trials = 60_000;
        for _ in 0..trials {
            for i in rng.subset(6, 2) {
                counts[i] += 1;
            }
        }
        let expected = trials as f64 * 2.0 / 6.0;
        for &c in &counts {
            assert!((c as f64 - expected).abs() < 0.05 * expected, "counts {counts:?}");
        }
    }

    #[test]
    fn gauss_moments() {
        let mut rng = Rng::new(23);
        let n = 200_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.gauss();
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
