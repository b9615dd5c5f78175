//! Counter-based Gaussian noise.
//!
//! Every path owns an independent ChaCha stream keyed by the run seed, and
//! every block of [`STEPS_PER_BLOCK`] time steps starts at a fixed word
//! position inside that stream. Increments for `(path, step)` are therefore
//! reproducible without replaying the whole path, which lets the backward
//! sweeps regenerate trajectory segments from checkpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Time steps sharing one positioned ChaCha window.
pub const STEPS_PER_BLOCK: usize = 64;

// Words reserved per block; generous enough for any realistic noise width.
const WORDS_PER_BLOCK: u128 = 1 << 32;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded family of per-path Gaussian streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    key: [u8; 32],
    seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
        }
        Self { key, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent family for a named purpose (fresh paths, inner batches, ...).
    pub fn derive(&self, tag: u64) -> Self {
        let mut state = self.seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        let mixed = splitmix(&mut state) ^ splitmix(&mut state).rotate_left(17);
        Self::new(mixed)
    }

    /// Cursor producing the normals of `path` from `start_step` on.
    pub fn cursor(&self, path: usize, start_step: usize, width: usize) -> NoiseCursor {
        let mut cursor = NoiseCursor {
            rng: ChaCha8Rng::from_seed(self.key),
            step: start_step,
            width,
        };
        cursor.rng.set_stream(path as u64);
        cursor.seek_block(start_step / STEPS_PER_BLOCK);
        let mut discard = vec![0.0; width];
        for _ in 0..start_step % STEPS_PER_BLOCK {
            cursor.draw(&mut discard);
        }
        cursor
    }
}

/// Sequential reader over one path's standard normals.
#[derive(Debug, Clone)]
pub struct NoiseCursor {
    rng: ChaCha8Rng,
    step: usize,
    width: usize,
}

impl NoiseCursor {
    fn seek_block(&mut self, block: usize) {
        self.rng.set_word_pos(block as u128 * WORDS_PER_BLOCK);
    }

    fn draw(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
    }

    /// Fills `out` (length = width) with the standard normals of the current
    /// step and advances to the next one.
    pub fn next_step(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.width);
        self.draw(out);
        self.step += 1;
        if self.step % STEPS_PER_BLOCK == 0 {
            self.seek_block(self.step / STEPS_PER_BLOCK);
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let stream = NoiseStream::new(7);
        let width = 3;
        let mut seq = stream.cursor(5, 0, width);
        let mut all = Vec::new();
        let mut buf = vec![0.0; width];
        for _ in 0..200 {
            seq.next_step(&mut buf);
            all.push(buf.clone());
        }
        for start in [0, 1, 63, 64, 65, 130, 199] {
            let mut c = stream.cursor(5, start, width);
            c.next_step(&mut buf);
            assert_eq!(buf, all[start], "start {start}");
        }
    }

    #[test]
    fn paths_and_seeds_are_distinct() {
        let a = NoiseStream::new(1);
        let b = NoiseStream::new(2);
        let mut x = vec![0.0; 4];
        let mut y = vec![0.0; 4];
        a.cursor(0, 0, 4).next_step(&mut x);
        a.cursor(1, 0, 4).next_step(&mut y);
        assert_ne!(x, y);
        b.cursor(0, 0, 4).next_step(&mut y);
        assert_ne!(x, y);
        a.derive(3).cursor(0, 0, 4).next_step(&mut y);
        assert_ne!(x, y);
    }

    #[test]
    fn moments_are_standard() {
        let stream = NoiseStream::new(11);
        let mut buf = [0.0; 2];
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
        for p in 0..200 {
            let mut c = stream.cursor(p, 0, 2);
            for _ in 0..100 {
                c.next_step(&mut buf);
                for v in buf {
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
        }
        let mean = s / n;
        let var = s2 / n - mean * mean;
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 0.03);
    }
}
