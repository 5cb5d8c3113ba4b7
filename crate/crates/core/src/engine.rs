//! Bucket fetches on the server side; query filtering, insertion and deletion
//! on the client side.

use std::collections::HashSet;

use rand::RngCore;

use crate::bucketizer::shuffle;
use crate::error::{Error, Result};
use crate::mapper::map_key;
use crate::model::Record;
use crate::outsource::{ClientState, OutsourcedBundle, RecordCipher};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryResult {
    pub records: Vec<Record>,
    /// Ciphertexts the server returned; always f·ℓ_b.
    pub fetched_count: usize,
    pub touched_buckets: Vec<usize>,
}

/// Every (RID, ciphertext) the listed buckets reference, bucket by bucket in
/// request order and slot by slot in index order. A RID shared by two
/// requested buckets is returned once per bucket.
pub fn fetch_buckets<'a>(bundle: &'a OutsourcedBundle, ids: &[usize]) -> Result<Vec<(u64, &'a [u8])>> {
    let mut out = Vec::with_capacity(ids.len() * bundle.meta.bucket_size);
    for &id in ids {
        for &rid in bundle.bucket(id)? {
            let ct = bundle
                .ciphertext(rid)
                .ok_or_else(|| Error::CorruptBundle(format!("bucket {id} references unknown RID {rid}")))?;
            out.push((rid, ct));
        }
    }
    Ok(out)
}

pub fn query(client: &ClientState, bundle: &OutsourcedBundle, key: &[u8]) -> Result<QueryResult> {
    let cipher = client.cipher()?;
    let ids = map_key(key, &client.map_config())?;
    let fetched = fetch_buckets(bundle, &ids)?;
    let mut seen = HashSet::with_capacity(fetched.len());
    let mut records = Vec::new();
    for &(rid, ct) in &fetched {
        let rec = cipher.decrypt(rid, ct)?;
        // neighbouring buckets can both expose one shared record
        if seen.insert(rid) && rec.matches(key) {
            records.push(rec);
        }
    }
    records.extend(client.stash.matching(key).cloned());
    Ok(QueryResult {
        records,
        fetched_count: fetched.len(),
        touched_buckets: ids,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    /// The record took over a fake slot.
    Bucket { bucket: usize, rid: u64 },
    /// No fake slot was free; the record went to the stash.
    Stash,
    /// The key already holds as many records as the buckets were sized for;
    /// the record went to the stash and a re-setup is advisable.
    CapacityWarning { count: usize, capacity: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeleteOutcome {
    Bucket { bucket: usize, rid: u64 },
    Stash,
}

struct Decrypted {
    bucket: usize,
    slots: Vec<(u64, Record)>,
}

fn decrypt_buckets(cipher: &RecordCipher, bundle: &OutsourcedBundle, ids: &[usize]) -> Result<Vec<Decrypted>> {
    ids.iter()
        .map(|&id| {
            let slots = fetch_buckets(bundle, &[id])?
                .into_iter()
                .map(|(rid, ct)| Ok((rid, cipher.decrypt(rid, ct)?)))
                .collect::<Result<_>>()?;
            Ok(Decrypted { bucket: id, slots })
        })
        .collect()
}

/// Re-encrypts every record of `bucket` under fresh nonces, with `rid`
/// replaced by `record`, and reshuffles the bucket's RID list.
fn rewrite_bucket<R: RngCore + ?Sized>(
    cipher: &RecordCipher,
    bundle: &mut OutsourcedBundle,
    dec: Decrypted,
    rid: u64,
    record: Record,
    rng: &mut R,
) -> Result<()> {
    for (r, rec) in &dec.slots {
        let rec = if *r == rid { &record } else { rec };
        let ct = cipher.encrypt(*r, rec, rng)?;
        bundle.replace_ciphertext(*r, ct);
    }
    shuffle(bundle.bucket_mut(dec.bucket), rng);
    Ok(())
}

/// Places a new record in a fake slot of one of the key's buckets (the one
/// with most such slots, earliest in map order on ties). Slots shared with a
/// neighbour are never used, so the neighbour's content stays unchanged.
pub fn insert<R: RngCore + ?Sized>(
    client: &mut ClientState,
    bundle: &mut OutsourcedBundle,
    key: &[u8],
    value: &[u8],
    rng: &mut R,
) -> Result<InsertOutcome> {
    if key.is_empty() {
        return Err(Error::InvalidParams("empty key is reserved".into()));
    }
    let record = Record::real(key, value);
    let cipher = client.cipher()?;
    // fail before touching anything if the record cannot be encoded
    cipher.encrypt(0, &record, rng)?;

    let ids = map_key(key, &client.map_config())?;
    let decrypted = decrypt_buckets(&cipher, bundle, &ids)?;

    let mut seen = HashSet::new();
    let count = decrypted
        .iter()
        .flat_map(|d| &d.slots)
        .filter(|(rid, r)| r.matches(key) && seen.insert(*rid))
        .count()
        + client.stash.matching(key).count();
    if count + 1 > client.key_capacity {
        client.stash.entries.push(record);
        return Ok(InsertOutcome::CapacityWarning {
            count,
            capacity: client.key_capacity,
        });
    }

    let free = |d: &Decrypted| -> Vec<u64> {
        d.slots
            .iter()
            .filter(|(rid, r)| r.is_fake() && bundle.reference_count(*rid) == 1)
            .map(|(rid, _)| *rid)
            .collect()
    };
    let mut best: Option<(usize, Vec<u64>)> = None;
    for (i, d) in decrypted.iter().enumerate() {
        let f = free(d);
        if !f.is_empty() && best.as_ref().is_none_or(|(_, b)| f.len() > b.len()) {
            best = Some((i, f));
        }
    }
    let Some((i, free_rids)) = best else {
        client.stash.entries.push(record);
        return Ok(InsertOutcome::Stash);
    };
    let rid = free_rids[0];
    let dec = decrypted.into_iter().nth(i).unwrap();
    let bucket = dec.bucket;
    rewrite_bucket(&cipher, bundle, dec, rid, record, rng)?;
    Ok(InsertOutcome::Bucket { bucket, rid })
}

/// Turns one stored copy of `(key, value)` into a fresh fake, or drops it
/// from the stash.
pub fn delete<R: RngCore + ?Sized>(
    client: &mut ClientState,
    bundle: &mut OutsourcedBundle,
    key: &[u8],
    value: &[u8],
    rng: &mut R,
) -> Result<DeleteOutcome> {
    let cipher = client.cipher()?;
    let ids = map_key(key, &client.map_config())?;
    let target = Record::real(key, value);
    for dec in decrypt_buckets(&cipher, bundle, &ids)? {
        if let Some(&(rid, _)) = dec.slots.iter().find(|(_, r)| *r == target) {
            let bucket = dec.bucket;
            rewrite_bucket(&cipher, bundle, dec, rid, Record::fake(), rng)?;
            return Ok(DeleteOutcome::Bucket { bucket, rid });
        }
    }
    if let Some(pos) = client.stash.entries.iter().position(|r| *r == target) {
        client.stash.entries.remove(pos);
        return Ok(DeleteOutcome::Stash);
    }
    Err(Error::NotFound)
}
