//! Key to bucket-id mapping.
//!
//! Each of the `f` ids is `H(salt ‖ key ‖ 0x00 ‖ γ) mod n` for counter
//! γ = 1..f, with γ as a big-endian `u32` and the digest read as a big-endian
//! integer. When an id repeats an earlier one the input is extended with a
//! big-endian `u32` retry index (1, 2, ...) until a fresh id appears. The salt
//! is a per-setup secret held by the client; with an empty salt the recipe is
//! the plain hash-and-mod of the key.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256, Sha512_256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashAlgorithm {
    #[default]
    Sha256,
    Sha512_256,
}

impl HashAlgorithm {
    pub fn id(&self) -> &'static str {
        match self {
            HashAlgorithm::Sha256 => "sha256",
            HashAlgorithm::Sha512_256 => "sha512-256",
        }
    }

    fn digest(&self, parts: &[&[u8]]) -> [u8; 32] {
        fn run<D: Digest>(parts: &[&[u8]]) -> [u8; 32] {
            let mut h = D::new();
            for p in parts {
                h.update(p);
            }
            let mut out = [0u8; 32];
            out.copy_from_slice(&h.finalize());
            out
        }
        match self {
            HashAlgorithm::Sha256 => run::<Sha256>(parts),
            HashAlgorithm::Sha512_256 => run::<Sha512_256>(parts),
        }
    }
}

impl fmt::Display for HashAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for HashAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sha256" => Ok(HashAlgorithm::Sha256),
            "sha512-256" => Ok(HashAlgorithm::Sha512_256),
            other => Err(Error::UnknownHash(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapConfig {
    pub hash: HashAlgorithm,
    /// Bucket count `n`, the modulus.
    pub buckets: usize,
    pub fanout: usize,
    pub salt: Vec<u8>,
}

impl MapConfig {
    pub fn new(hash: HashAlgorithm, buckets: usize, fanout: usize) -> Self {
        MapConfig {
            hash,
            buckets,
            fanout,
            salt: Vec::new(),
        }
    }

    pub fn with_salt(mut self, salt: impl Into<Vec<u8>>) -> Self {
        self.salt = salt.into();
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.fanout == 0 || self.buckets == 0 || self.fanout > self.buckets {
            return Err(Error::FanoutExceedsBuckets {
                fanout: self.fanout,
                buckets: self.buckets,
            });
        }
        Ok(())
    }
}

/// Maps `key` to `cfg.fanout` distinct bucket ids in `[0, cfg.buckets)`.
pub fn map_key(key: &[u8], cfg: &MapConfig) -> Result<Vec<usize>> {
    cfg.check()?;
    let n = cfg.buckets as u128;
    let mut ids = Vec::with_capacity(cfg.fanout);
    for gamma in 1..=cfg.fanout as u32 {
        let gamma = gamma.to_be_bytes();
        let base: [&[u8]; 4] = [&cfg.salt, key, &[0u8], &gamma];
        let mut id = digest_mod(&cfg.hash.digest(&base), n);
        let mut retry = 0u32;
        while ids.contains(&id) {
            retry += 1;
            let r = retry.to_be_bytes();
            id = digest_mod(&cfg.hash.digest(&[&cfg.salt, key, &[0u8], &gamma, &r]), n);
        }
        ids.push(id);
    }
    Ok(ids)
}

fn digest_mod(digest: &[u8; 32], n: u128) -> usize {
    digest.iter().fold(0u128, |acc, &b| (acc * 256 + b as u128) % n) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, f: usize) -> MapConfig {
        MapConfig::new(HashAlgorithm::Sha256, n, f)
    }

    // Expected ids come from a standalone Python replay of the recipe
    // (hashlib.sha256, int.from_bytes(.., "big") % n).
    #[test]
    fn matches_reference_recipe() {
        assert_eq!(map_key(b"apple", &cfg(10, 3)).unwrap(), vec![6, 5, 7]);
        assert_eq!(map_key(b"k", &cfg(6, 1)).unwrap(), vec![4]);
        assert_eq!(map_key(b"apple", &cfg(64, 6)).unwrap(), vec![56, 11, 55, 4, 45, 47]);
        // needs 11 retries in total
        assert_eq!(map_key(b"banana", &cfg(4, 4)).unwrap(), vec![2, 1, 0, 3]);
        assert_eq!(map_key(b"cherry", &cfg(3, 3)).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn single_bucket() {
        assert_eq!(map_key(b"k", &cfg(1, 1)).unwrap(), vec![0]);
    }

    #[test]
    fn fanout_exceeding_buckets_is_rejected() {
        assert!(matches!(
            map_key(b"k", &cfg(2, 3)),
            Err(Error::FanoutExceedsBuckets { fanout: 3, buckets: 2 })
        ));
    }

    #[test]
    fn salt_changes_assignment() {
        let a = map_key(b"apple", &cfg(1 << 20, 3)).unwrap();
        let b = map_key(b"apple", &cfg(1 << 20, 3).with_salt(*b"salt")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn hash_identifiers_roundtrip() {
        for h in [HashAlgorithm::Sha256, HashAlgorithm::Sha512_256] {
            assert_eq!(h.id().parse::<HashAlgorithm>().unwrap(), h);
        }
        assert!("md5".parse::<HashAlgorithm>().is_err());
    }
}
