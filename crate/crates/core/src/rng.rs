//! Pinned pseudo-random primitives.
//!
//! Every seeded procedure in this crate (dataset splitting, subset sampling,
//! evaluation-set selection) goes through the same SplitMix64 stream and the
//! same Fisher-Yates shuffle so that results are reproducible across runs
//! and reimplementations in other languages.

/// SplitMix64 generator (Steele, Lea & Flood 2014).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform-ish draw in `0..n` by modulo reduction. The tiny modulo bias is
    /// accepted in exchange for a trivially portable definition.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }
}

/// In-place Fisher-Yates shuffle driven by an existing stream.
pub fn shuffle_with<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Fisher-Yates shuffle of `items` from a fresh stream seeded with `seed`.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = SplitMix64::new(seed);
    shuffle_with(items, &mut rng);
}

/// The first `k` indices of a seeded shuffle of `0..n`; a sample without
/// replacement under the shared stream discipline.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k <= n, "sample size {k} exceeds population {n}");
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, seed);
    idx.truncate(k);
    idx
}
