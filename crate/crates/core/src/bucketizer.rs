//! Layout computation, randomized bucket creation and disjoint padding.

use std::collections::HashMap;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::mapper::{map_key, MapConfig};
use crate::model::{Bucket, Dataset, Layout, Params, Record, Stash};

/// Buckets produced by bucket creation, before or after padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketSet {
    pub layout: Layout,
    pub buckets: Vec<Bucket>,
    pub stash: Stash,
}

impl BucketSet {
    pub fn empty(layout: Layout) -> Self {
        BucketSet {
            layout,
            buckets: (0..layout.bucket_count).map(Bucket::new).collect(),
            stash: Stash::default(),
        }
    }

    /// Builds a set from explicit home sizes; every home record is a distinct
    /// real record keyed `b{bucket}` so tests can reason about identities.
    pub fn from_sizes(bucket_size: usize, sizes: &[usize]) -> Self {
        let layout = Layout {
            bucket_size,
            bucket_count: sizes.len(),
        };
        let mut bs = BucketSet::empty(layout);
        for (b, &s) in bs.buckets.iter_mut().zip(sizes) {
            b.slots = (0..s)
                .map(|i| Record::real(format!("b{}", b.id), i.to_string()))
                .collect();
        }
        bs
    }

    pub fn bucket_size(&self) -> usize {
        self.layout.bucket_size
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(|b| b.slots.len()).collect()
    }

    pub fn home_sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(Bucket::home_len).collect()
    }

    pub fn real_count(&self) -> usize {
        self.buckets.iter().map(Bucket::home_len).sum()
    }

    pub fn fake_count(&self) -> usize {
        self.buckets.iter().map(Bucket::fake_len).sum()
    }

    /// Physically stored records: every own slot once, borrowed slots not at all.
    pub fn stored_record_count(&self) -> usize {
        self.buckets.iter().map(|b| b.slots.len()).sum()
    }

    /// Multimap index entries: own plus borrowed slots.
    pub fn index_entry_count(&self) -> usize {
        self.buckets.iter().map(Bucket::effective_len).sum()
    }
}

/// ℓ_b = ⌈QA·L_max / f⌉ and n = ⌈SA·|D| / ℓ_b⌉.
pub fn compute_layout(params: &Params, total: usize, l_max: usize) -> Result<Layout> {
    params.validate()?;
    if total == 0 || l_max == 0 {
        return Err(Error::EmptyDataset);
    }
    let bucket_size = params.qa.mul_div_ceil(l_max as u64, params.fanout as u64) as usize;
    let bucket_count = params.sa.mul_div_ceil(total as u64, bucket_size as u64) as usize;
    Ok(Layout {
        bucket_size,
        bucket_count,
    })
}

/// Fisher–Yates shuffle drawing indices as `u64` so the permutation for a
/// given RNG stream does not depend on the pointer width.
pub fn shuffle<T, R: RngCore + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

/// Shuffles the dataset, then places every record into the least-full of its
/// mapped buckets (earliest in map order on ties), or into the stash when all
/// of them are at capacity.
pub fn build_buckets<R: RngCore + ?Sized>(
    dataset: &Dataset,
    layout: Layout,
    map: &MapConfig,
    rng: &mut R,
) -> Result<BucketSet> {
    if map.buckets != layout.bucket_count {
        return Err(Error::InvalidParams(format!(
            "map modulus {} differs from bucket count {}",
            map.buckets, layout.bucket_count
        )));
    }
    map.check()?;

    let mut candidates: HashMap<&[u8], Vec<usize>> = HashMap::with_capacity(dataset.key_count());
    for key in dataset.counts().keys() {
        candidates.insert(key.as_slice(), map_key(key, map)?);
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    shuffle(&mut order, rng);

    let mut bs = BucketSet::empty(layout);
    let cap = layout.bucket_size;
    for idx in order {
        let record = &dataset.records()[idx];
        let ids = &candidates[record.key.as_slice()];
        let mut best = ids[0];
        for &id in &ids[1..] {
            if bs.buckets[id].slots.len() < bs.buckets[best].slots.len() {
                best = id;
            }
        }
        if bs.buckets[best].slots.len() < cap {
            bs.buckets[best].slots.push(record.clone());
        } else {
            bs.stash.entries.push(record.clone());
        }
    }
    Ok(bs)
}

/// Pads every bucket with fake records up to the bucket size.
pub fn pad_disjoint(mut bs: BucketSet) -> BucketSet {
    let cap = bs.layout.bucket_size;
    for b in &mut bs.buckets {
        debug_assert!(b.slots.len() <= cap, "bucket {} over capacity", b.id);
        let missing = cap.saturating_sub(b.slots.len());
        b.slots.extend(std::iter::repeat_with(Record::fake).take(missing));
    }
    bs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::HashAlgorithm;
    use crate::model::Ratio;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn params(qa: Ratio, sa: Ratio, f: usize) -> Params {
        Params {
            qa,
            sa,
            fanout: f,
            ..Params::default()
        }
    }

    #[test]
    fn layout_examples() {
        let one = Ratio::integer(1);
        assert_eq!(
            compute_layout(&params(one, one, 2), 8, 4).unwrap(),
            Layout {
                bucket_size: 2,
                bucket_count: 4
            }
        );
        assert_eq!(
            compute_layout(&params(Ratio::new(3, 2), one, 2), 8, 4).unwrap(),
            Layout {
                bucket_size: 3,
                bucket_count: 3
            }
        );
        // ⌈357/6⌉ = 60, ⌈1.2 · 6e6 / 60⌉ = 120000
        assert_eq!(
            compute_layout(&params(one, Ratio::new(6, 5), 6), 6_000_000, 357).unwrap(),
            Layout {
                bucket_size: 60,
                bucket_count: 120_000
            }
        );
    }

    #[test]
    fn layout_rejects_empty_dataset() {
        let p = Params::default();
        assert!(matches!(compute_layout(&p, 0, 0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn single_key_fills_single_bucket() {
        let ds = Dataset::from_pairs((0..4).map(|i| ("k", i.to_string()))).unwrap();
        let p = params(Ratio::integer(1), Ratio::integer(1), 1);
        let layout = compute_layout(&p, ds.len(), ds.l_max()).unwrap();
        assert_eq!(
            layout,
            Layout {
                bucket_size: 4,
                bucket_count: 1
            }
        );
        let cfg = MapConfig::new(HashAlgorithm::Sha256, 1, 1);
        let bs = build_buckets(&ds, layout, &cfg, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert_eq!(bs.sizes(), vec![4]);
        assert!(bs.stash.is_empty());
    }

    #[test]
    fn colliding_keys_overflow_to_stash() {
        // n = 2, f = 1: find two keys that both map to bucket 0
        let cfg = MapConfig::new(HashAlgorithm::Sha256, 2, 1);
        let keys: Vec<String> = (0..)
            .map(|i| format!("key{i}"))
            .filter(|k| map_key(k.as_bytes(), &cfg).unwrap() == vec![0])
            .take(2)
            .collect();
        let ds = Dataset::from_pairs(
            keys.iter()
                .flat_map(|k| [(k.clone(), "a".to_string()), (k.clone(), "b".to_string())]),
        )
        .unwrap();
        let layout = Layout {
            bucket_size: 2,
            bucket_count: 2,
        };
        let bs = build_buckets(&ds, layout, &cfg, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        assert_eq!(bs.sizes(), vec![2, 0]);
        assert_eq!(bs.stash.len(), 2);
    }

    #[test]
    fn disjoint_padding_examples() {
        let padded = pad_disjoint(BucketSet::from_sizes(2, &[1, 2, 0]));
        let fakes: Vec<_> = padded.buckets.iter().map(Bucket::fake_len).collect();
        assert_eq!(fakes, vec![1, 0, 2]);

        let padded = pad_disjoint(BucketSet::from_sizes(4, &[4, 2, 1, 3]));
        let fakes: Vec<_> = padded.buckets.iter().map(Bucket::fake_len).collect();
        assert_eq!(fakes, vec![0, 2, 3, 1]);
        assert_eq!(padded.fake_count(), 6);
        assert!(padded.sizes().iter().all(|&s| s == 4));

        let full = pad_disjoint(BucketSet::from_sizes(3, &[3, 3]));
        assert_eq!(full.fake_count(), 0);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<u32> = (0..100).collect();
        shuffle(&mut v, &mut ChaCha20Rng::seed_from_u64(9));
        let mut s = v.clone();
        s.sort();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
