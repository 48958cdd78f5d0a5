//! Counter-based Gaussian draws keyed by `(seed, stream, index)`.
//!
//! Each draw consumes exactly four 32-bit words of a ChaCha8 keystream, so
//! draw `i` of stream `s` sits at a fixed keystream position and can be
//! produced in any order, on any thread, with the same result.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS_PER_DRAW: u128 = 4;

/// Expands a 64-bit seed into a 256-bit ChaCha key (SplitMix64 sequence).
fn expand_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}

#[derive(Clone)]
pub struct CounterNormal {
    rng: ChaCha8Rng,
}

impl CounterNormal {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(expand_seed(seed));
        rng.set_stream(stream);
        CounterNormal { rng }
    }

    fn next_normal(&mut self) -> f64 {
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Standard normal draw number `index` of this stream.
    pub fn normal_at(&mut self, index: u64) -> f64 {
        self.rng.set_word_pos(index as u128 * WORDS_PER_DRAW);
        self.next_normal()
    }

    /// Fills `out` with draws `start, start + 1, ...`.
    pub fn fill_normals(&mut self, start: u64, out: &mut [f64]) {
        self.rng.set_word_pos(start as u128 * WORDS_PER_DRAW);
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let mut a = CounterNormal::new(42, 7);
        let mut seq = vec![0.0; 64];
        a.fill_normals(0, &mut seq);
        let mut b = CounterNormal::new(42, 7);
        for i in (0..64).rev() {
            assert_eq!(b.normal_at(i as u64).to_bits(), seq[i].to_bits());
        }
        let mut tail = vec![0.0; 10];
        b.fill_normals(30, &mut tail);
        assert_eq!(&tail[..], &seq[30..40]);
    }

    #[test]
    fn streams_and_seeds_differ() {
        let x = CounterNormal::new(1, 0).normal_at(0);
        assert_ne!(x, CounterNormal::new(1, 1).normal_at(0));
        assert_ne!(x, CounterNormal::new(2, 0).normal_at(0));
    }

    #[test]
    fn moments_are_standard() {
        let mut g = CounterNormal::new(123, 0);
        let mut v = vec![0.0; 100_000];
        g.fill_normals(0, &mut v);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 5 standard errors
        assert!(mean.abs() < 5.0 / n.sqrt());
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n).sqrt());
    }
}
