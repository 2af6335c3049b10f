//! Counter-based random streams: one stream per circuit operation, seekable
//! by trajectory index.
//!
//! Every (trajectory, operation) pair owns a disjoint slice of a ChaCha8
//! keystream, so results are bit-identical for a given master seed no matter
//! how trajectories are distributed over workers, and two operations never
//! share randomness regardless of execution order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 32-bit words of keystream reserved per (trajectory, op): 16 u64 draws.
const WORDS_PER_OP: u128 = 32;
const MAX_DRAWS_PER_OP: u32 = (WORDS_PER_OP / 2) as u32;

/// Factory keyed by the master seed; hands out per-op substreams.
#[derive(Clone, Debug)]
pub struct RngFactory {
    key: [u8; 32],
}

impl RngFactory {
    pub fn new(master_seed: u64) -> Self {
        // Expand the seed with splitmix64 so nearby seeds give unrelated keys.
        let mut key = [0u8; 32];
        let mut s = master_seed;
        for chunk in key.chunks_mut(8) {
            s = s.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 31;
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        Self { key }
    }

    /// Stream for operation `op_id` within trajectory `trajectory`.
    pub fn op_stream(&self, trajectory: u64, op_id: u64) -> RandomStream {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(op_id);
        rng.set_word_pos(trajectory as u128 * WORDS_PER_OP);
        RandomStream { rng, draws: 0 }
    }
}

/// A bounded slice of keystream for one operation in one trajectory.
#[derive(Debug)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    draws: u32,
}

impl RandomStream {
    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        assert!(
            self.draws <= MAX_DRAWS_PER_OP,
            "operation exceeded its randomness budget"
        );
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in 0..n.
    pub fn next_below(&mut self, n: u64) -> u64 {
        // Modulo bias is < 2^-50 for the small n used here.
        self.next_u64() % n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic_and_disjoint() {
        let f = RngFactory::new(42);
        let a1: Vec<u64> = {
            let mut s = f.op_stream(7, 3);
            (0..4).map(|_| s.next_u64()).collect()
        };
        let a2: Vec<u64> = {
            let mut s = f.op_stream(7, 3);
            (0..4).map(|_| s.next_u64()).collect()
        };
        assert_eq!(a1, a2);
        let b: Vec<u64> = {
            let mut s = f.op_stream(8, 3);
            (0..4).map(|_| s.next_u64()).collect()
        };
        assert_ne!(a1, b);
        let c: Vec<u64> = {
            let mut s = f.op_stream(7, 4);
            (0..4).map(|_| s.next_u64()).collect()
        };
        assert_ne!(a1, c);
    }

    #[test]
    fn adjacent_trajectories_do_not_overlap() {
        let f = RngFactory::new(1);
        // Drain trajectory 0's full budget and compare with trajectory 1.
        let mut s0 = f.op_stream(0, 0);
        let tail: Vec<u64> = (0..16).map(|_| s0.next_u64()).collect();
        let mut s1 = f.op_stream(1, 0);
        let head: Vec<u64> = (0..16).map(|_| s1.next_u64()).collect();
        assert_ne!(tail, head);
        // Trajectory 1 starts exactly where trajectory 0's budget ends.
        let mut probe = f.op_stream(0, 0);
        for _ in 0..16 {
            probe.next_u64();
        }
        assert_eq!(probe.rng.next_u64(), head[0]);
    }

    #[test]
    fn f64_in_unit_interval() {
        let f = RngFactory::new(9);
        let mut s = f.op_stream(0, 0);
        for _ in 0..10 {
            let x = s.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
