use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use veil_core::engine::*;
use veil_core::{datagen, map_key, pipeline, Dataset, Error, Params, Record};

fn sorted(mut v: Vec<Record>) -> Vec<Record> {
    v.sort_by(|a, b| (&a.key, &a.value).cmp(&(&b.key, &b.value)));
    v
}

fn scan(records: &[Record], key: &[u8]) -> Vec<Record> {
    sorted(records.iter().filter(|r| r.key == key).cloned().collect())
}

fn zipf(n: usize, k: usize, seed: u64) -> Dataset {
    datagen::generate(&datagen::SkewSpec {
        num_keys: k,
        num_records: n,
        z: 0.6,
        seed,
        value_width: 12,
    })
    .unwrap()
}

#[test]
fn fetch_counts_and_range() {
    let ds = zipf(200, 20, 1);
    let s = pipeline::setup(
        &ds,
        &Params {
            fanout: 2,
            seed: 1,
            ..Params::default()
        },
    )
    .unwrap();
    let lb = s.client.bucket_size;
    assert_eq!(fetch_buckets(&s.bundle, &[0, 1]).unwrap().len(), 2 * lb);
    let n = s.bundle.bucket_count();
    assert!(matches!(
        fetch_buckets(&s.bundle, &[n]),
        Err(Error::BucketIdOutOfRange { .. })
    ));
}

#[test]
fn shared_rids_are_returned_per_bucket() {
    let ds = zipf(300, 30, 2);
    let s = pipeline::setup(
        &ds,
        &Params {
            fanout: 2,
            degree: 2,
            seed: 3,
            sa: veil_core::Ratio::integer(2),
            ..Params::default()
        },
    )
    .unwrap();
    assert!(s.padded.overlap_size() > 0);
    // neighbours 0 and 1 share δ RIDs
    let got = fetch_buckets(&s.bundle, &[0, 1]).unwrap();
    assert_eq!(got.len(), 2 * s.client.bucket_size);
    let distinct: std::collections::HashSet<u64> = got.iter().map(|(r, _)| *r).collect();
    assert_eq!(got.len() - distinct.len(), s.padded.overlap_size());
}

#[test]
fn every_key_matches_plaintext_scan() {
    let ds = zipf(3000, 200, 3);
    for (degree, desired) in [(0, None), (2, None), (4, None), (2, Some(3))] {
        let params = Params {
            fanout: 3,
            degree,
            desired_overlap: desired,
            seed: 9,
            ..Params::default()
        };
        let s = pipeline::setup(&ds, &params).unwrap();
        for key in ds.counts().keys() {
            let r = query(&s.client, &s.bundle, key).unwrap();
            assert_eq!(sorted(r.records), scan(ds.records(), key), "degree {degree}");
            assert_eq!(r.fetched_count, 3 * s.client.bucket_size);
        }
        let absent = query(&s.client, &s.bundle, b"no-such-key").unwrap();
        assert!(absent.records.is_empty());
        assert_eq!(absent.fetched_count, 3 * s.client.bucket_size);
    }
}

#[test]
fn partially_stashed_key_is_complete() {
    // two keys of two records that collide on a single bucket out of two
    let params = Params {
        fanout: 1,
        seed: 4,
        sa: veil_core::Ratio::integer(1),
        ..Params::default()
    };
    // search for a colliding pair under the salt this seed draws
    for i in 0..1000 {
        let (a, b) = (format!("a{i}"), format!("b{i}"));
        let ds = Dataset::from_pairs([
            (a.as_str(), "1"),
            (a.as_str(), "2"),
            (b.as_str(), "1"),
            (b.as_str(), "2"),
        ])
        .unwrap();
        let s = pipeline::setup(&ds, &params).unwrap();
        let cfg = s.client.map_config();
        if map_key(a.as_bytes(), &cfg).unwrap() != map_key(b.as_bytes(), &cfg).unwrap() {
            continue;
        }
        assert_eq!(s.client.stash.len(), 2);
        for k in [&a, &b] {
            let r = query(&s.client, &s.bundle, k.as_bytes()).unwrap();
            assert_eq!(sorted(r.records), scan(ds.records(), k.as_bytes()));
        }
        return;
    }
    panic!("no colliding pair found");
}

#[test]
fn uniform_volume_over_random_queries() {
    let ds = zipf(2000, 100, 5);
    let s = pipeline::setup(
        &ds,
        &Params {
            fanout: 4,
            degree: 2,
            seed: 2,
            ..Params::default()
        },
    )
    .unwrap();
    let keys: Vec<&Vec<u8>> = ds.counts().keys().collect();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    for i in 0..1000 {
        let key = if i % 2 == 0 {
            keys[rng.gen_range(0..keys.len())].clone()
        } else {
            format!("missing{}", rng.gen::<u32>()).into_bytes()
        };
        let r = query(&s.client, &s.bundle, &key).unwrap();
        assert_eq!(r.touched_buckets.len(), 4);
        assert_eq!(r.fetched_count, 4 * s.client.bucket_size);
    }
}

#[test]
fn insert_uses_fake_slot_and_reencrypts() {
    let ds = Dataset::from_pairs([("a", "1"), ("b", "1"), ("c", "1"), ("c", "2")]).unwrap();
    let mut s = pipeline::setup(
        &ds,
        &Params {
            fanout: 1,
            seed: 1,
            sa: veil_core::Ratio::integer(4),
            ..Params::default()
        },
    )
    .unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let bucket = map_key(b"a", &s.client.map_config()).unwrap()[0];
    let fakes_before = count_fakes(&s, bucket);
    assert!(fakes_before > 0);
    let before: Vec<Vec<u8>> = s
        .bundle
        .bucket(bucket)
        .unwrap()
        .iter()
        .map(|r| s.bundle.ciphertext(*r).unwrap().to_vec())
        .collect();
    let out = insert(&mut s.client, &mut s.bundle, b"a", b"2", &mut rng).unwrap();
    assert!(matches!(out, InsertOutcome::Bucket { bucket: b, .. } if b == bucket));
    assert_eq!(count_fakes(&s, bucket), fakes_before - 1);
    assert_eq!(s.bundle.bucket(bucket).unwrap().len(), s.client.bucket_size);
    let after: std::collections::HashSet<Vec<u8>> = s
        .bundle
        .bucket(bucket)
        .unwrap()
        .iter()
        .map(|r| s.bundle.ciphertext(*r).unwrap().to_vec())
        .collect();
    assert!(
        before.iter().all(|c| !after.contains(c)),
        "stale ciphertext survived re-encryption"
    );
    let r = query(&s.client, &s.bundle, b"a").unwrap();
    assert_eq!(r.records.len(), 2);
}

fn count_fakes(s: &pipeline::Setup, bucket: usize) -> usize {
    let c = s.client.cipher().unwrap();
    s.bundle
        .bucket(bucket)
        .unwrap()
        .iter()
        .filter(|&&rid| c.decrypt(rid, s.bundle.ciphertext(rid).unwrap()).unwrap().is_fake())
        .count()
}

#[test]
fn insert_into_full_buckets_goes_to_stash() {
    // one key filling its only bucket exactly
    let ds = Dataset::from_pairs((0..4).map(|i| ("k", i.to_string()))).unwrap();
    let mut s = pipeline::setup(
        &ds,
        &Params {
            fanout: 1,
            sa: veil_core::Ratio::integer(1),
            qa: "1.5".parse().unwrap(),
            seed: 0,
            ..Params::default()
        },
    )
    .unwrap();
    // ℓ_b = 6, n = 1: two fakes, then the stash
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    assert!(matches!(
        insert(&mut s.client, &mut s.bundle, b"j", b"0", &mut rng).unwrap(),
        InsertOutcome::Bucket { .. }
    ));
    assert!(matches!(
        insert(&mut s.client, &mut s.bundle, b"j", b"1", &mut rng).unwrap(),
        InsertOutcome::Bucket { .. }
    ));
    assert_eq!(
        insert(&mut s.client, &mut s.bundle, b"j", b"2", &mut rng).unwrap(),
        InsertOutcome::Stash
    );
    assert_eq!(s.client.stash.len(), 1);
    // k already has 4 of its ⌊1.5 · 4⌋ = 6 slots; the 7th record trips the warning
    insert(&mut s.client, &mut s.bundle, b"k", b"4", &mut rng).unwrap();
    insert(&mut s.client, &mut s.bundle, b"k", b"5", &mut rng).unwrap();
    assert!(matches!(
        insert(&mut s.client, &mut s.bundle, b"k", b"6", &mut rng).unwrap(),
        InsertOutcome::CapacityWarning { count: 6, capacity: 6 }
    ));
    assert_eq!(query(&s.client, &s.bundle, b"k").unwrap().records.len(), 7);
}

#[test]
fn delete_then_reinsert_reuses_slot() {
    let ds = Dataset::from_pairs((0..4).map(|i| ("k", i.to_string()))).unwrap();
    let mut s = pipeline::setup(
        &ds,
        &Params {
            fanout: 1,
            sa: veil_core::Ratio::integer(1),
            seed: 0,
            ..Params::default()
        },
    )
    .unwrap();
    // ℓ_b = 4, n = 1: no fake slots at all
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let d = delete(&mut s.client, &mut s.bundle, b"k", b"2", &mut rng).unwrap();
    let DeleteOutcome::Bucket { rid, .. } = d else {
        panic!("expected bucket delete")
    };
    assert_eq!(s.bundle.bucket(0).unwrap().len(), 4);
    assert_eq!(query(&s.client, &s.bundle, b"k").unwrap().records.len(), 3);
    let i = insert(&mut s.client, &mut s.bundle, b"z", b"9", &mut rng).unwrap();
    assert_eq!(i, InsertOutcome::Bucket { bucket: 0, rid });
    assert!(matches!(
        delete(&mut s.client, &mut s.bundle, b"k", b"2", &mut rng),
        Err(Error::NotFound)
    ));
}

#[test]
fn delete_from_stash() {
    let ds = Dataset::from_pairs((0..4).map(|i| ("k", i.to_string()))).unwrap();
    let mut s = pipeline::setup(
        &ds,
        &Params {
            fanout: 1,
            sa: veil_core::Ratio::integer(1),
            seed: 0,
            ..Params::default()
        },
    )
    .unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    assert_eq!(
        insert(&mut s.client, &mut s.bundle, b"q", b"1", &mut rng).unwrap(),
        InsertOutcome::Stash
    );
    assert_eq!(
        delete(&mut s.client, &mut s.bundle, b"q", b"1", &mut rng).unwrap(),
        DeleteOutcome::Stash
    );
    assert!(s.client.stash.is_empty());
}

#[test]
fn tampered_ciphertext_fails_decryption() {
    let ds = zipf(100, 10, 1);
    let s = pipeline::setup(
        &ds,
        &Params {
            fanout: 2,
            seed: 1,
            ..Params::default()
        },
    )
    .unwrap();
    let mut bytes = s.bundle.to_bytes();
    bytes.records[20] ^= 0x80;
    assert!(veil_core::OutsourcedBundle::from_bytes(&bytes)
        .unwrap_err()
        .is_integrity());

    let cipher = s.client.cipher().unwrap();
    let (rid, ct) = s.bundle.records().next().unwrap();
    let mut forged = ct.to_vec();
    forged[15] ^= 1;
    assert!(matches!(
        cipher.decrypt(rid, &forged),
        Err(Error::DecryptionFailure { .. })
    ));
    // a ciphertext moved to another RID does not authenticate either
    assert!(matches!(
        cipher.decrypt(rid + 1, ct),
        Err(Error::DecryptionFailure { .. })
    ));
}
