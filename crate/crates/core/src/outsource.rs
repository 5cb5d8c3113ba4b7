//! Encryption of finalized buckets into a record store plus a per-bucket RID
//! index, and the on-disk formats of the server bundle and client state.
//!
//! Server files (all integers big-endian):
//!
//! * `records.bin`: repeated `RID u64 | len u32 | ciphertext`, ascending RID
//! * `index.bin`: repeated `bucket u32 | count u32 | count × RID u64`
//! * `meta.json`: public parameters plus SHA-256 digests of both binaries
//!
//! Client files: `client.json` (map parameters, key, salt) and `stash.tsv`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes128Gcm, KeyInit, Nonce};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bucketizer::{shuffle, BucketSet};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mapper::{HashAlgorithm, MapConfig};
use crate::model::{read_records_tsv, write_records_tsv, Record, RecordKind, Stash};

pub const FORMAT_VERSION: u32 = 1;
pub const KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
/// Kind tag, two length prefixes and at least one key byte.
pub const MIN_RECORD_WIDTH: usize = 1 + 2 + 2 + 1;

pub const META_FILE: &str = "meta.json";
pub const RECORDS_FILE: &str = "records.bin";
pub const INDEX_FILE: &str = "index.bin";
pub const CLIENT_FILE: &str = "client.json";
pub const STASH_FILE: &str = "stash.tsv";

const TAG_FAKE: u8 = 0;
const TAG_REAL: u8 = 1;
/// Bytes per `records.bin` entry besides the ciphertext.
pub const RECORD_HEADER_LEN: usize = 8 + 4;

pub fn ciphertext_len(record_width: usize) -> usize {
    NONCE_LEN + record_width + TAG_LEN
}

/// Fixed-width plaintext: `kind u8`, then for real records
/// `klen u16 | key | vlen u16 | value`, then random fill. Fakes are the tag
/// followed by random bytes only.
pub fn encode_record<R: RngCore + ?Sized>(record: &Record, width: usize, rng: &mut R) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(width);
    match record.kind {
        RecordKind::Fake => out.push(TAG_FAKE),
        RecordKind::Real => {
            let len = 1 + 2 + record.key.len() + 2 + record.value.len();
            if len > width || record.key.len() > u16::MAX as usize || record.value.len() > u16::MAX as usize {
                return Err(Error::RecordTooWide { len, width });
            }
            out.push(TAG_REAL);
            out.extend_from_slice(&(record.key.len() as u16).to_be_bytes());
            out.extend_from_slice(&record.key);
            out.extend_from_slice(&(record.value.len() as u16).to_be_bytes());
            out.extend_from_slice(&record.value);
        }
    }
    let start = out.len();
    out.resize(width, 0);
    rng.fill_bytes(&mut out[start..]);
    Ok(out)
}

pub fn decode_record(plain: &[u8]) -> Option<Record> {
    let (&tag, rest) = plain.split_first()?;
    match tag {
        TAG_FAKE => Some(Record::fake()),
        TAG_REAL => {
            let (key, rest) = take_prefixed(rest)?;
            let (value, _) = take_prefixed(rest)?;
            Some(Record::real(key, value))
        }
        _ => None,
    }
}

fn take_prefixed(buf: &[u8]) -> Option<(&[u8], &[u8])> {
    let len = u16::from_be_bytes(buf.get(..2)?.try_into().ok()?) as usize;
    let body = buf.get(2..2 + len)?;
    Some((body, &buf[2 + len..]))
}

/// AES-128 key for record encryption.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; KEY_LEN]);

impl SecretKey {
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        SecretKey(k)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let k: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| Error::InvalidParams(format!("key must be {KEY_LEN} bytes")))?;
        Ok(SecretKey(k))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// AEAD over fixed-width plaintexts, with the RID bound in as associated data
/// so ciphertexts cannot be swapped between RIDs.
#[derive(Clone)]
pub struct RecordCipher {
    aead: Aes128Gcm,
    width: usize,
}

impl RecordCipher {
    pub fn new(key: &SecretKey, width: usize) -> Self {
        RecordCipher {
            aead: Aes128Gcm::new_from_slice(key.as_bytes()).expect("16-byte key"),
            width,
        }
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, rid: u64, record: &Record, rng: &mut R) -> Result<Vec<u8>> {
        let plain = encode_record(record, self.width, rng)?;
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let aad = rid.to_be_bytes();
        let body = self
            .aead
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: &plain, aad: &aad })
            .expect("AES-GCM encryption of a bounded buffer");
        let mut out = Vec::with_capacity(ciphertext_len(self.width));
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn decrypt(&self, rid: u64, ciphertext: &[u8]) -> Result<Record> {
        let fail = || Error::DecryptionFailure { rid };
        if ciphertext.len() != ciphertext_len(self.width) {
            return Err(fail());
        }
        let (nonce, body) = ciphertext.split_at(NONCE_LEN);
        let aad = rid.to_be_bytes();
        let plain = self
            .aead
            .decrypt(Nonce::from_slice(nonce), Payload { msg: body, aad: &aad })
            .map_err(|_| fail())?;
        decode_record(&plain).ok_or_else(fail)
    }
}

/// Public bundle parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    /// MAP modulus.
    pub n: usize,
    /// Physical bucket count; one more than `n` after parity repair.
    pub bucket_count: usize,
    pub fanout: usize,
    pub bucket_size: usize,
    pub degree: usize,
    /// Overlap shared by every pair of neighbours (0 for disjoint padding).
    pub overlap: usize,
    pub desired_overlap: Option<usize>,
    pub hash: HashAlgorithm,
    pub record_width: usize,
    pub ciphertext_len: usize,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: BundleMeta,
    records_sha256: String,
    index_sha256: String,
    #[serde(default)]
    checksum: String,
}

impl MetaFile {
    fn digest(&self) -> String {
        value_digest(serde_json::to_value(self).expect("meta serializes"))
    }
}

/// Digest of the JSON object with its checksum blanked; keys are compared as
/// parsed, so an unknown or renamed key changes it too.
fn value_digest(mut value: serde_json::Value) -> String {
    if let Some(obj) = value.as_object_mut() {
        obj.insert("checksum".into(), serde_json::Value::String(String::new()));
    }
    sha256_hex(&serde_json::to_vec(&value).expect("meta serializes"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The server's view: ciphertexts by RID and each bucket's RID list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutsourcedBundle {
    pub meta: BundleMeta,
    records: BTreeMap<u64, Vec<u8>>,
    index: Vec<Vec<u64>>,
    /// Number of bucket lists referencing each RID.
    refs: HashMap<u64, u32>,
}

/// Serialized bundle files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleBytes {
    pub meta: Vec<u8>,
    pub records: Vec<u8>,
    pub index: Vec<u8>,
}

impl OutsourcedBundle {
    fn new(meta: BundleMeta, records: BTreeMap<u64, Vec<u8>>, index: Vec<Vec<u64>>) -> Self {
        let mut refs = HashMap::with_capacity(records.len());
        for rid in index.iter().flatten() {
            *refs.entry(*rid).or_insert(0) += 1;
        }
        OutsourcedBundle {
            meta,
            records,
            index,
            refs,
        }
    }

    pub fn bucket_count(&self) -> usize {
        self.index.len()
    }

    pub fn bucket(&self, id: usize) -> Result<&[u64]> {
        self.index.get(id).map(Vec::as_slice).ok_or(Error::BucketIdOutOfRange {
            id,
            count: self.index.len(),
        })
    }

    pub fn ciphertext(&self, rid: u64) -> Option<&[u8]> {
        self.records.get(&rid).map(Vec::as_slice)
    }

    pub fn records(&self) -> impl Iterator<Item = (u64, &[u8])> {
        self.records.iter().map(|(&r, c)| (r, c.as_slice()))
    }

    /// Distinct stored ciphertexts.
    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    /// Total RID entries across all bucket lists.
    pub fn index_entry_count(&self) -> usize {
        self.index.iter().map(Vec::len).sum()
    }

    /// Index entries beyond the first reference of each RID.
    pub fn duplicated_entries(&self) -> usize {
        self.index_entry_count() - self.records.len()
    }

    pub fn reference_count(&self, rid: u64) -> u32 {
        self.refs.get(&rid).copied().unwrap_or(0)
    }

    pub(crate) fn replace_ciphertext(&mut self, rid: u64, ct: Vec<u8>) {
        let slot = self.records.get_mut(&rid).expect("rid exists");
        *slot = ct;
    }

    pub(crate) fn bucket_mut(&mut self, id: usize) -> &mut Vec<u64> {
        &mut self.index[id]
    }

    pub fn to_bytes(&self) -> BundleBytes {
        let mut records = Vec::with_capacity(self.records.len() * (RECORD_HEADER_LEN + self.meta.ciphertext_len));
        for (rid, ct) in &self.records {
            records.extend_from_slice(&rid.to_be_bytes());
            records.extend_from_slice(&(ct.len() as u32).to_be_bytes());
            records.extend_from_slice(ct);
        }
        let mut index = Vec::with_capacity(self.index_entry_count() * 8 + self.index.len() * 8);
        for (b, list) in self.index.iter().enumerate() {
            index.extend_from_slice(&(b as u32).to_be_bytes());
            index.extend_from_slice(&(list.len() as u32).to_be_bytes());
            for rid in list {
                index.extend_from_slice(&rid.to_be_bytes());
            }
        }
        let mut file = MetaFile {
            meta: self.meta.clone(),
            records_sha256: sha256_hex(&records),
            index_sha256: sha256_hex(&index),
            checksum: String::new(),
        };
        file.checksum = file.digest();
        let mut meta = serde_json::to_vec_pretty(&file).expect("meta serializes");
        meta.push(b'\n');
        BundleBytes { meta, records, index }
    }

    pub fn from_bytes(bytes: &BundleBytes) -> Result<Self> {
        let meta_file = parse_meta(&bytes.meta)?;
        let meta = meta_file.meta.clone();
        let records = parse_records(&bytes.records, meta.ciphertext_len)?;
        let index = parse_index(&bytes.index, &meta, &records)?;
        if sha256_hex(&bytes.records) != meta_file.records_sha256 {
            return Err(Error::ChecksumFailure(RECORDS_FILE.into()));
        }
        if sha256_hex(&bytes.index) != meta_file.index_sha256 {
            return Err(Error::ChecksumFailure(INDEX_FILE.into()));
        }
        Ok(OutsourcedBundle::new(meta, records, index))
    }

    pub fn store(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let b = self.to_bytes();
        fs::write(dir.join(RECORDS_FILE), &b.records)?;
        fs::write(dir.join(INDEX_FILE), &b.index)?;
        fs::write(dir.join(META_FILE), &b.meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bytes = BundleBytes {
            meta: fs::read(dir.join(META_FILE))?,
            records: fs::read(dir.join(RECORDS_FILE))?,
            index: fs::read(dir.join(INDEX_FILE))?,
        };
        OutsourcedBundle::from_bytes(&bytes)
    }
}

fn parse_meta(raw: &[u8]) -> Result<MetaFile> {
    let value: serde_json::Value = serde_json::from_slice(raw).map_err(|e| Error::MalformedMeta(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::MalformedMeta("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let stored = value
        .get("checksum")
        .and_then(serde_json::Value::as_str)
        .unwrap_or_default()
        .to_owned();
    if value_digest(value.clone()) != stored {
        return Err(Error::ChecksumFailure(META_FILE.into()));
    }
    serde_json::from_value(value).map_err(|e| Error::MalformedMeta(e.to_string()))
}

struct Reader<'a> {
    buf: &'a [u8],
    file: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::TruncatedFile(self.file.into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse_records(raw: &[u8], ct_len: usize) -> Result<BTreeMap<u64, Vec<u8>>> {
    let mut r = Reader {
        buf: raw,
        file: RECORDS_FILE,
    };
    let mut out = BTreeMap::new();
    let mut last = None;
    while !r.buf.is_empty() {
        let rid = r.u64()?;
        let len = r.u32()? as usize;
        if len != ct_len {
            return Err(Error::CorruptBundle(format!(
                "record {rid} has length {len}, expected {ct_len}"
            )));
        }
        if last.is_some_and(|l| rid <= l) {
            return Err(Error::CorruptBundle(format!("record {rid} out of order")));
        }
        last = Some(rid);
        out.insert(rid, r.take(len)?.to_vec());
    }
    Ok(out)
}

fn parse_index(raw: &[u8], meta: &BundleMeta, records: &BTreeMap<u64, Vec<u8>>) -> Result<Vec<Vec<u64>>> {
    let mut r = Reader {
        buf: raw,
        file: INDEX_FILE,
    };
    let mut index = Vec::with_capacity(meta.bucket_count);
    while !r.buf.is_empty() {
        let id = r.u32()? as usize;
        if id != index.len() {
            return Err(Error::CorruptBundle(format!("bucket {id} out of order")));
        }
        let count = r.u32()? as usize;
        if count != meta.bucket_size {
            return Err(Error::CorruptBundle(format!("bucket {id} lists {count} RIDs")));
        }
        let mut list = Vec::with_capacity(count);
        for _ in 0..count {
            let rid = r.u64()?;
            if !records.contains_key(&rid) {
                return Err(Error::CorruptBundle(format!(
                    "bucket {id} references unknown RID {rid}"
                )));
            }
            list.push(rid);
        }
        index.push(list);
    }
    if index.len() != meta.bucket_count {
        return Err(Error::TruncatedFile(INDEX_FILE.into()));
    }
    Ok(index)
}

/// Everything the client keeps between sessions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientState {
    pub fanout: usize,
    /// MAP modulus.
    pub n: usize,
    pub bucket_count: usize,
    pub bucket_size: usize,
    pub hash: HashAlgorithm,
    #[serde(with = "hex")]
    pub salt: Vec<u8>,
    #[serde(with = "hex")]
    key: Vec<u8>,
    pub record_width: usize,
    /// ⌊QA·L_max⌋: records per key the buckets were sized for.
    pub key_capacity: usize,
    #[serde(skip)]
    pub stash: Stash,
}

impl ClientState {
    pub fn map_config(&self) -> MapConfig {
        MapConfig::new(self.hash, self.n, self.fanout).with_salt(self.salt.clone())
    }

    pub fn cipher(&self) -> Result<RecordCipher> {
        Ok(RecordCipher::new(&SecretKey::from_bytes(&self.key)?, self.record_width))
    }

    pub fn client_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("client state serializes");
        v.push(b'\n');
        v
    }

    pub fn stash_tsv(&self) -> Vec<u8> {
        let mut v = Vec::new();
        write_records_tsv(&mut v, &self.stash.entries).expect("writing to memory");
        v
    }

    pub fn store(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CLIENT_FILE), self.client_json())?;
        fs::write(dir.join(STASH_FILE), self.stash_tsv())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let raw = fs::read(dir.join(CLIENT_FILE))?;
        let mut state: ClientState = serde_json::from_slice(&raw).map_err(|e| Error::Parse {
            line: e.line(),
            reason: e.to_string(),
        })?;
        SecretKey::from_bytes(&state.key)?;
        let f = fs::File::open(dir.join(STASH_FILE))?;
        state.stash.entries = read_records_tsv(BufReader::new(f))?;
        Ok(state)
    }
}

/// Everything besides the buckets that goes into a bundle.
#[derive(Clone, Debug)]
pub struct BundleConfig {
    pub map: MapConfig,
    pub degree: usize,
    pub overlap: usize,
    pub desired_overlap: Option<usize>,
    pub record_width: usize,
    pub key_capacity: usize,
    pub exec: Execution,
}

/// Encrypts every physical slot once under a RID drawn from a shuffled
/// sequence; each bucket's list holds its own RIDs plus those of its borrowed
/// slots, in shuffled order.
pub fn encrypt_and_bundle<R: RngCore + ?Sized>(
    bs: &BucketSet,
    cfg: &BundleConfig,
    key: &SecretKey,
    rng: &mut R,
) -> Result<(OutsourcedBundle, ClientState)> {
    let total = bs.stored_record_count();
    let mut pool: Vec<u64> = (0..total as u64).collect();
    shuffle(&mut pool, rng);

    let mut rid_of = Vec::with_capacity(bs.buckets.len());
    let mut items: Vec<(u64, &Record)> = Vec::with_capacity(total);
    let mut next = pool.into_iter();
    for b in &bs.buckets {
        let rids: Vec<u64> = b.slots.iter().map(|_| next.next().unwrap()).collect();
        items.extend(rids.iter().copied().zip(&b.slots));
        rid_of.push(rids);
    }

    let mut index = Vec::with_capacity(bs.buckets.len());
    for b in &bs.buckets {
        let mut list = rid_of[b.id].clone();
        list.extend(b.borrowed.iter().map(|s| rid_of[s.bucket][s.index]));
        shuffle(&mut list, rng);
        index.push(list);
    }

    let cipher = RecordCipher::new(key, cfg.record_width);
    let master = rng.gen::<u64>();
    let cts = cfg.exec.try_map(items.len(), |i| {
        let mut r = ChaCha20Rng::seed_from_u64(master);
        r.set_stream(i as u64);
        let (rid, rec) = items[i];
        cipher.encrypt(rid, rec, &mut r)
    })?;
    let records: BTreeMap<u64, Vec<u8>> = items.iter().map(|&(rid, _)| rid).zip(cts).collect();

    let meta = BundleMeta {
        format_version: FORMAT_VERSION,
        n: cfg.map.buckets,
        bucket_count: bs.buckets.len(),
        fanout: cfg.map.fanout,
        bucket_size: bs.bucket_size(),
        degree: cfg.degree,
        overlap: cfg.overlap,
        desired_overlap: cfg.desired_overlap,
        hash: cfg.map.hash,
        record_width: cfg.record_width,
        ciphertext_len: ciphertext_len(cfg.record_width),
    };
    let client = ClientState {
        fanout: cfg.map.fanout,
        n: cfg.map.buckets,
        bucket_count: bs.buckets.len(),
        bucket_size: bs.bucket_size(),
        hash: cfg.map.hash,
        salt: cfg.map.salt.clone(),
        key: key.as_bytes().to_vec(),
        record_width: cfg.record_width,
        key_capacity: cfg.key_capacity,
        stash: bs.stash.clone(),
    };
    Ok((OutsourcedBundle::new(meta, records, index), client))
}
