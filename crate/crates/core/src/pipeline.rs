//! End-to-end setup: layout, bucket creation, padding and outsourcing.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bucketizer::{build_buckets, compute_layout, pad_disjoint, BucketSet};
use crate::error::Result;
use crate::exec::Execution;
use crate::mapper::MapConfig;
use crate::model::{Dataset, Layout, Params};
use crate::outsource::{encrypt_and_bundle, BundleConfig, ClientState, OutsourcedBundle, SecretKey};
use crate::overlap::{apply_desired_overlap, pad_overlapping, OverlapOutcome};

pub const SALT_LEN: usize = 16;

/// Padded buckets before encryption.
#[derive(Clone, Debug)]
pub struct Padded {
    pub layout: Layout,
    pub map: MapConfig,
    pub buckets: BucketSet,
    /// Present when the overlap graph degree is non-zero.
    pub overlap: Option<OverlapOutcome>,
    pub key_capacity: usize,
}

impl Padded {
    /// δ, or the fixed overlap under a desired overlap; 0 for disjoint padding.
    pub fn overlap_size(&self) -> usize {
        self.overlap.as_ref().map_or(0, |o| o.graph.delta)
    }
}

#[derive(Clone, Debug)]
pub struct Setup {
    pub padded: Padded,
    pub bundle: OutsourcedBundle,
    pub client: ClientState,
}

/// Fresh per-setup MAP salt; the first draw of every setup.
pub fn draw_salt<R: RngCore + ?Sized>(rng: &mut R) -> Vec<u8> {
    let mut salt = vec![0u8; SALT_LEN];
    rng.fill_bytes(&mut salt);
    salt
}

/// Builds and pads the buckets. All randomness (MAP salt, shuffle) comes
/// from `rng`.
pub fn pad<R: RngCore + ?Sized>(dataset: &Dataset, params: &Params, rng: &mut R) -> Result<Padded> {
    params.validate()?;
    let layout = compute_layout(params, dataset.len(), dataset.l_max())?;
    let map = MapConfig::new(params.hash, layout.bucket_count, params.fanout).with_salt(draw_salt(rng));
    let built = build_buckets(dataset, layout, &map, rng)?;
    let (buckets, overlap) = if params.degree == 0 {
        (pad_disjoint(built), None)
    } else {
        let mut out = pad_overlapping(built, params.degree)?;
        if let Some(o) = params.desired_overlap {
            out = apply_desired_overlap(out, o)?;
        }
        (out.buckets.clone(), Some(out))
    };
    Ok(Padded {
        layout,
        map,
        buckets,
        overlap,
        key_capacity: params.qa.mul_floor(dataset.l_max() as u64) as usize,
    })
}

/// Full setup driven by `params.seed`.
pub fn setup(dataset: &Dataset, params: &Params) -> Result<Setup> {
    setup_with(dataset, params, Execution::default())
}

pub fn setup_with(dataset: &Dataset, params: &Params, exec: Execution) -> Result<Setup> {
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let padded = pad(dataset, params, &mut rng)?;
    let key = SecretKey::generate(&mut rng);
    let cfg = BundleConfig {
        map: padded.map.clone(),
        degree: params.degree,
        overlap: padded.overlap_size(),
        desired_overlap: params.desired_overlap,
        record_width: params.record_width,
        key_capacity: padded.key_capacity,
        exec,
    };
    let (bundle, client) = encrypt_and_bundle(&padded.buckets, &cfg, &key, &mut rng)?;
    Ok(Setup { padded, bundle, client })
}
