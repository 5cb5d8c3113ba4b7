//! Skewed key-value datasets with Zipf-distributed per-key volumes.

use rand::distributions::Alphanumeric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewSpec {
    pub num_keys: usize,
    pub num_records: usize,
    /// Zipf exponent; 0 is uniform.
    pub z: f64,
    pub seed: u64,
    pub value_width: usize,
}

impl Default for SkewSpec {
    fn default() -> Self {
        SkewSpec {
            num_keys: 5_000,
            num_records: 100_000,
            z: 0.4,
            seed: 0,
            value_width: 16,
        }
    }
}

impl SkewSpec {
    fn check(&self) -> Result<()> {
        if self.num_keys == 0 {
            return Err(Error::InvalidSpec("at least one key is required".into()));
        }
        if self.num_keys > self.num_records {
            return Err(Error::InvalidSpec(format!(
                "{} keys cannot each receive a record out of {}",
                self.num_keys, self.num_records
            )));
        }
        if !self.z.is_finite() || self.z < 0.0 {
            return Err(Error::InvalidSpec(format!("skew {} must be finite and >= 0", self.z)));
        }
        Ok(())
    }

    /// Synthetic identifier of the key with the given 1-based rank.
    pub fn key_name(&self, rank: usize) -> String {
        let width = self.num_keys.to_string().len().max(6);
        format!("k{rank:0width$}")
    }
}

/// Per-key record counts by rank: one record per key, then the remaining
/// N − K distributed over weights i^(−z) by largest remainder (ties go to the
/// lower rank). Deterministic in (K, N, z).
pub fn zipf_counts(spec: &SkewSpec) -> Result<Vec<usize>> {
    spec.check()?;
    let k = spec.num_keys;
    let weights: Vec<f64> = (1..=k).map(|i| (i as f64).powf(-spec.z)).collect();
    let total: f64 = weights.iter().sum();
    let rest = (spec.num_records - k) as f64;
    let quotas: Vec<f64> = weights.iter().map(|w| rest * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| *q as usize).collect();
    let left = (spec.num_records - k).saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(left) {
        counts[i] += 1;
    }
    Ok(counts.into_iter().map(|c| c + 1).collect())
}

/// Key-major dataset with seeded random alphanumeric values.
pub fn generate(spec: &SkewSpec) -> Result<Dataset> {
    let counts = zipf_counts(spec)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.num_records);
    for (i, &c) in counts.iter().enumerate() {
        let key = spec.key_name(i + 1);
        for _ in 0..c {
            let value: Vec<u8> = (&mut rng).sample_iter(Alphanumeric).take(spec.value_width).collect();
            records.push(Record::real(key.clone(), value));
        }
    }
    Dataset::new(records)
}
