//! Keyed MAC and randomness capabilities.
//!
//! Every MAC in both handshakes goes through [`MacAlgorithm`]; every nonce
//! comes from a [`RandomSource`].

use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, KeyInit, Mac};
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng, TryRngCore};
use rand_chacha::ChaCha20Rng;
use sha1::Sha1;
use sha2::Sha256;
use thiserror::Error;

use crate::wire::{MacTag, Nonce128};

pub type MacOutput = [u8; 20];

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("random generation failed: {0}")]
    Generation(String),
}

/// A keyed MAC with a 160-bit output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MacAlgorithm {
    #[default]
    HmacSha1,
    /// HMAC-SHA-256 truncated to its first 20 bytes.
    HmacSha256Trunc160,
}

impl MacAlgorithm {
    pub const NAMES: [&'static str; 2] = ["hmac-sha1", "hmac-sha256-160"];

    pub fn name(self) -> &'static str {
        match self {
            MacAlgorithm::HmacSha1 => "hmac-sha1",
            MacAlgorithm::HmacSha256Trunc160 => "hmac-sha256-160",
        }
    }

    /// Checked entry point: keys must be 16 bytes (tag id) or 20 bytes
    /// (tag key) and the message must not be empty.
    pub fn mac(self, key: &[u8], message: &[u8]) -> Result<MacOutput, CryptoError> {
        if key.len() != 16 && key.len() != 20 {
            return Err(CryptoError::InvalidArgument(format!(
                "MAC key must be 16 or 20 bytes, got {}",
                key.len()
            )));
        }
        if message.is_empty() {
            return Err(CryptoError::InvalidArgument(
                "MAC message must not be empty".into(),
            ));
        }
        Ok(self.mac_parts(key, &[message]))
    }

    /// MAC over the concatenation of `parts`. Callers inside the crate only
    /// pass fixed-width, non-empty inputs.
    pub(crate) fn mac_parts(self, key: &[u8], parts: &[&[u8]]) -> MacOutput {
        match self {
            MacAlgorithm::HmacSha1 => {
                let mut m = <Hmac<Sha1> as KeyInit>::new_from_slice(key)
                    .expect("HMAC accepts keys of any length");
                for p in parts {
                    m.update(p);
                }
                m.finalize().into_bytes().into()
            }
            MacAlgorithm::HmacSha256Trunc160 => {
                let mut m = <Hmac<Sha256> as KeyInit>::new_from_slice(key)
                    .expect("HMAC accepts keys of any length");
                for p in parts {
                    m.update(p);
                }
                let full = m.finalize().into_bytes();
                let mut out = [0u8; 20];
                out.copy_from_slice(&full[..20]);
                out
            }
        }
    }
}

impl fmt::Display for MacAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MacAlgorithm {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hmac-sha1" => Ok(MacAlgorithm::HmacSha1),
            "hmac-sha256-160" => Ok(MacAlgorithm::HmacSha256Trunc160),
            other => Err(CryptoError::InvalidArgument(format!(
                "unknown MAC algorithm {other:?}, expected one of {:?}",
                Self::NAMES
            ))),
        }
    }
}

/// First 16 bytes of a MAC output.
pub fn truncate128(m: &MacOutput) -> [u8; 16] {
    let mut out = [0u8; 16];
    out.copy_from_slice(&m[..16]);
    out
}

/// Constant-time equality for MAC values.
pub fn mac_eq(a: &MacTag, b: &MacTag) -> bool {
    a.as_bytes()
        .iter()
        .zip(b.as_bytes())
        .fold(0u8, |acc, (x, y)| acc | (x ^ y))
        == 0
}

/// Source of nonces. `Os` is for real deployments; `Seeded` makes whole
/// simulations reproducible from one seed.
pub enum RandomSource {
    Os,
    Seeded(Box<ChaCha20Rng>),
}

impl RandomSource {
    pub fn os() -> Self {
        RandomSource::Os
    }

    pub fn seeded(seed: u64) -> Self {
        Self::seeded_stream(seed, 0)
    }

    /// Independent deterministic stream under the same seed.
    pub fn seeded_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomSource::Seeded(Box::new(rng))
    }

    pub fn fill(&mut self, buf: &mut [u8]) -> Result<(), CryptoError> {
        match self {
            RandomSource::Os => OsRng
                .try_fill_bytes(buf)
                .map_err(|e| CryptoError::Generation(e.to_string())),
            RandomSource::Seeded(rng) => {
                rng.fill_bytes(buf);
                Ok(())
            }
        }
    }

    /// Draws `bits` random bits. Only 128-bit draws exist in the protocols.
    pub fn random_bits(&mut self, bits: usize) -> Result<Vec<u8>, CryptoError> {
        if bits != 128 {
            return Err(CryptoError::InvalidArgument(format!(
                "only 128-bit draws are supported, requested {bits}"
            )));
        }
        let mut out = vec![0u8; 16];
        self.fill(&mut out)?;
        Ok(out)
    }

    pub fn nonce(&mut self) -> Result<Nonce128, CryptoError> {
        let mut out = [0u8; 16];
        self.fill(&mut out)?;
        Ok(Nonce128::from_bytes(out))
    }

    pub fn next_u64(&mut self) -> Result<u64, CryptoError> {
        let mut out = [0u8; 8];
        self.fill(&mut out)?;
        Ok(u64::from_le_bytes(out))
    }
}

impl fmt::Debug for RandomSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RandomSource::Os => f.write_str("RandomSource::Os"),
            RandomSource::Seeded(_) => f.write_str("RandomSource::Seeded"),
        }
    }
}
