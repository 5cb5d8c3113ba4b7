//! Volume-hiding encrypted key-value store.
//!
//! Records are spread over equal-sized buckets chosen by a salted hash of the
//! key, so every query fetches the same number of encrypted records no matter
//! how many the key actually has. Overflow goes to a small client-side stash.
//! Buckets are padded either with fake records only, or partly by sharing
//! records with their neighbours in a circulant d-regular graph, which cuts
//! the storage spent on padding.
//!
//! ```
//! use veil_core::{engine, pipeline, Dataset, Params};
//!
//! let ds = Dataset::from_pairs([("a", "1"), ("a", "2"), ("b", "3")]).unwrap();
//! let params = Params { fanout: 2, ..Params::default() };
//! let s = pipeline::setup(&ds, &params).unwrap();
//! let hit = engine::query(&s.client, &s.bundle, b"a").unwrap();
//! assert_eq!(hit.records.len(), 2);
//! assert_eq!(hit.fetched_count, 2 * s.client.bucket_size);
//! ```

pub mod analysis;
pub mod bench;
pub mod bucketizer;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod exec;
pub mod mapper;
pub mod model;
pub mod outsource;
pub mod overlap;
pub mod pipeline;

pub use bucketizer::BucketSet;
pub use error::{Error, Result};
pub use exec::Execution;
pub use mapper::{map_key, HashAlgorithm, MapConfig};
pub use model::{Bucket, Dataset, Layout, Metrics, Params, Ratio, Record, RecordKind, SlotRef, Stash};
pub use outsource::{ClientState, OutsourcedBundle};
