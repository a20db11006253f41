//! Pinned hashing and random-number primitives.
//!
//! Everything random in the pipeline flows through these functions so that
//! independent implementations produce bit-identical output for the same seed.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Streaming FNV-1a, used for digests of files that are never held in memory.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a64 {
    state: u64,
}

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self { state: FNV_OFFSET }
    }
}

impl Fnv1a64 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The first output of a SplitMix64 generator seeded with `x`.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    mix(x.wrapping_add(GOLDEN_GAMMA))
}

/// `splitmix64(seed ^ fnv1a64(key))`: the one derivation used for every
/// per-document, per-class and per-patient stream.
#[inline]
pub fn derive_seed(seed: u64, key: &[u8]) -> u64 {
    splitmix64(seed ^ fnv1a64(key))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform index in `0..bound` by multiply-shift. `bound` must be non-zero.
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((u128::from(self.next_u64()) * u128::from(bound)) >> 64) as u64
    }

    /// Draws `u = next_u64 / 2^64` and reports whether `u < p`.
    ///
    /// The comparison is done exactly in integer arithmetic.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        let x = self.next_u64();
        u128::from(x) < probability_cutoff(p)
    }
}

/// `p * 2^64` as an integer cutoff; exact because scaling by a power of two is.
#[inline]
pub(crate) fn probability_cutoff(p: f64) -> u128 {
    if p.is_nan() || p <= 0.0 {
        0
    } else if p >= 1.0 {
        1u128 << 64
    } else {
        (p * 18_446_744_073_709_551_616.0) as u128
    }
}

/// In-place Fisher-Yates shuffle, top index down.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for i in (1..items.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Golden values computed with an independent Python transcription.
    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        let mut h = Fnv1a64::new();
        h.update(b"a");
        assert_eq!(h.finish(), fnv1a64(b"a"));
    }

    #[test]
    fn splitmix_reference_stream() {
        let mut g = SplitMix64::new(0);
        assert_eq!(g.next_u64(), 0xe220_a839_7b1d_cdaf);
        assert_eq!(g.next_u64(), 0x6e78_9e6a_a1b9_65f4);
        assert_eq!(g.next_u64(), 0x06c4_5d18_8009_454f);
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn shuffle_reference() {
        let mut v: Vec<u32> = (0..10).collect();
        shuffle(&mut v, 7);
        assert_eq!(v, vec![9, 5, 8, 6, 1, 2, 4, 7, 0, 3]);
    }

    #[test]
    fn bernoulli_extremes() {
        let mut g = SplitMix64::new(3);
        assert!((0..1000).all(|_| g.bernoulli(1.0)));
        assert!((0..1000).all(|_| !g.bernoulli(0.0)));
        assert_eq!(probability_cutoff(0.5), 1u128 << 63);
    }
}
