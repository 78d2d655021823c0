//! Binary checkpoint: policy weights plus everything needed to continue the
//! random streams. Streams are counter-based, so the seeds and the step
//! counter are the complete rng state.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "RLVRCKPT" | version u32 | step u64 | run_seed u64 | suite_seed u64
//! | cumulative_rollouts u64 | rows u32 | cols u32 | rows*cols f64, row-major
//! ```

use crate::env::Policy;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RLVRCKPT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 * 4 + 4 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub run_seed: u64,
    pub suite_seed: u64,
    pub cumulative_rollouts: u64,
    pub policy: Policy,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.policy.weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.step, self.run_seed, self.suite_seed, self.cumulative_rollouts] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.policy.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.policy.vocab_size as u32).to_le_bytes());
        for w in &self.policy.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Checkpoint(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let rows = u32_at(44) as usize;
        let cols = u32_at(48) as usize;
        let expected = HEADER_LEN + 8 * rows * cols;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} bytes for a {rows} x {cols} policy, found {}",
                bytes.len()
            )));
        }
        let weights = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            step: u64_at(12),
            run_seed: u64_at(20),
            suite_seed: u64_at(28),
            cumulative_rollouts: u64_at(36),
            policy: Policy::from_weights(rows, cols, weights)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let weights = (0..12).map(|i| (i as f64 - 5.5) * 0.1).collect();
        Checkpoint {
            step: 17,
            run_seed: 3,
            suite_seed: 99,
            cumulative_rollouts: 1234,
            policy: Policy::from_weights(3, 4, weights).unwrap(),
        }
    }

    #[test]
    fn test_round_trip_is_byte_exact() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn test_rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad.extend_from_slice(&[0; 8]);
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
