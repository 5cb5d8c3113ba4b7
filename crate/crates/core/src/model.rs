//! Domain types shared across the bucketization pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::HashAlgorithm;

/// Default plaintext width every record is padded to before encryption.
pub const DEFAULT_RECORD_WIDTH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    Real,
    Fake,
}

/// A key-value pair. Fake records carry the empty key, which ingestion rejects.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub kind: RecordKind,
}

impl Record {
    pub fn real(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        Record {
            key: key.into(),
            value: value.into(),
            kind: RecordKind::Real,
        }
    }

    pub fn fake() -> Self {
        Record {
            key: Vec::new(),
            value: Vec::new(),
            kind: RecordKind::Fake,
        }
    }

    pub fn is_fake(&self) -> bool {
        self.kind == RecordKind::Fake
    }

    pub fn matches(&self, key: &[u8]) -> bool {
        self.kind == RecordKind::Real && self.key == key
    }
}

/// Exact non-negative rational used for the QA and SA targets so that the
/// layout ceilings never suffer from floating point rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "zero denominator");
        let g = gcd(num, den);
        Ratio {
            num: num / g,
            den: den / g,
        }
    }

    pub fn integer(v: u64) -> Self {
        Ratio { num: v, den: 1 }
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// ⌈self · a / b⌉
    pub fn mul_div_ceil(&self, a: u64, b: u64) -> u64 {
        let num = self.num as u128 * a as u128;
        let den = self.den as u128 * b as u128;
        num.div_ceil(den) as u64
    }

    /// ⌊self · a⌋
    pub fn mul_floor(&self, a: u64) -> u64 {
        (self.num as u128 * a as u128 / self.den as u128) as u64
    }

    pub fn at_least_one(&self) -> bool {
        self.num >= self.den
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

impl TryFrom<f64> for Ratio {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidParams(format!("{v} is not a non-negative ratio")));
        }
        // six decimal digits is far below anything the layout can resolve
        Ok(Ratio::new((v * 1e6).round() as u64, 1_000_000))
    }
}

impl From<Ratio> for f64 {
    fn from(r: Ratio) -> f64 {
        r.as_f64()
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParams(format!("`{s}` is not a decimal number"));
        let s = s.trim();
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if frac.len() > 9 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
        Ok(Ratio::new(num, den))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}", self.as_f64())
        }
    }
}

/// A multiset of real records grouped by key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    records: Vec<Record>,
    counts: BTreeMap<Vec<u8>, usize>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.kind != RecordKind::Real {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: "datasets hold real records only".into(),
                });
            }
            if r.key.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: "empty key is reserved".into(),
                });
            }
            *counts.entry(r.key.clone()).or_insert(0) += 1;
        }
        Ok(Dataset { records, counts })
    }

    pub fn from_pairs<K, V, I>(pairs: I) -> Result<Self>
    where
        K: Into<Vec<u8>>,
        V: Into<Vec<u8>>,
        I: IntoIterator<Item = (K, V)>,
    {
        Dataset::new(pairs.into_iter().map(|(k, v)| Record::real(k, v)).collect())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-key record counts, ordered by key.
    pub fn counts(&self) -> &BTreeMap<Vec<u8>, usize> {
        &self.counts
    }

    pub fn count(&self, key: &[u8]) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn key_count(&self) -> usize {
        self.counts.len()
    }

    /// Largest number of records sharing one key; zero for an empty dataset.
    pub fn l_max(&self) -> usize {
        self.counts.values().copied().max().unwrap_or(0)
    }

    /// Values stored under `key`, in dataset order.
    pub fn values_of(&self, key: &[u8]) -> Vec<Vec<u8>> {
        self.records
            .iter()
            .filter(|r| r.key == key)
            .map(|r| r.value.clone())
            .collect()
    }

    /// Reads `key<TAB>value` lines. Blank lines are skipped.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                continue;
            }
            let (k, v) = parse_tsv_line(line).map_err(|reason| Error::Parse { line: i + 1, reason })?;
            records.push(Record::real(k, v));
        }
        Dataset::new(records)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        write_records_tsv(&mut w, &self.records)
    }
}

fn parse_tsv_line(line: &str) -> std::result::Result<(&str, &str), String> {
    let (k, v) = line
        .split_once('\t')
        .ok_or_else(|| "expected `key<TAB>value`".to_string())?;
    if v.contains('\t') {
        return Err("more than one TAB".into());
    }
    if k.is_empty() {
        return Err("empty key".into());
    }
    Ok((k, v))
}

pub(crate) fn write_records_tsv<W: Write>(w: &mut W, records: &[Record]) -> Result<()> {
    for r in records {
        w.write_all(&r.key)?;
        w.write_all(b"\t")?;
        w.write_all(&r.value)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub(crate) fn read_records_tsv<R: BufRead>(reader: R) -> Result<Vec<Record>> {
    Ok(Dataset::read_tsv(reader)?.records)
}

/// User-facing knobs of a setup run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Query amplification target.
    pub qa: Ratio,
    /// Storage amplification target.
    pub sa: Ratio,
    pub fanout: usize,
    /// Overlap graph degree; zero selects disjoint padding.
    pub degree: usize,
    /// Fixed overlap for the data-independent overlapping variant.
    pub desired_overlap: Option<usize>,
    pub seed: u64,
    pub hash: HashAlgorithm,
    pub record_width: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            qa: Ratio::integer(1),
            sa: Ratio::new(6, 5),
            fanout: 6,
            degree: 0,
            desired_overlap: None,
            seed: 0,
            hash: HashAlgorithm::Sha256,
            record_width: DEFAULT_RECORD_WIDTH,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        if !self.qa.at_least_one() {
            return Err(Error::InvalidParams(format!("QA must be >= 1, got {}", self.qa)));
        }
        if !self.sa.at_least_one() {
            return Err(Error::InvalidParams(format!("SA must be >= 1, got {}", self.sa)));
        }
        if self.fanout == 0 {
            return Err(Error::InvalidParams("fanout must be >= 1".into()));
        }
        if self.desired_overlap.is_some() && self.degree == 0 {
            return Err(Error::InvalidParams("a desired overlap needs degree >= 1".into()));
        }
        if self.record_width < crate::outsource::MIN_RECORD_WIDTH {
            return Err(Error::InvalidParams(format!(
                "record width must be at least {} bytes",
                crate::outsource::MIN_RECORD_WIDTH
            )));
        }
        Ok(())
    }
}

/// Bucket size and count derived from the targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub bucket_size: usize,
    pub bucket_count: usize,
}

/// Position of a physical record slot: bucket id and index into that
/// bucket's ordered own-slot list (home records followed by fakes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotRef {
    pub bucket: usize,
    pub index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bucket {
    pub id: usize,
    /// Own slots: home records in placement order, then fakes.
    pub slots: Vec<Record>,
    /// Slots borrowed from neighbours under overlapping padding.
    pub borrowed: Vec<SlotRef>,
}

impl Bucket {
    pub fn new(id: usize) -> Self {
        Bucket {
            id,
            ..Default::default()
        }
    }

    pub fn home_len(&self) -> usize {
        self.slots.iter().filter(|r| !r.is_fake()).count()
    }

    pub fn fake_len(&self) -> usize {
        self.slots.iter().filter(|r| r.is_fake()).count()
    }

    /// Own plus borrowed slots.
    pub fn effective_len(&self) -> usize {
        self.slots.len() + self.borrowed.len()
    }

    /// Physical identities of every slot this bucket exposes.
    pub fn effective_refs(&self) -> impl Iterator<Item = SlotRef> + '_ {
        (0..self.slots.len())
            .map(|index| SlotRef { bucket: self.id, index })
            .chain(self.borrowed.iter().copied())
    }
}

/// Client-side overflow store, kept in plaintext.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stash {
    pub entries: Vec<Record>,
}

impl Stash {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn matching<'a>(&'a self, key: &'a [u8]) -> impl Iterator<Item = &'a Record> + 'a {
        self.entries.iter().filter(move |r| r.matches(key))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub qa_actual: f64,
    pub sa_actual: f64,
    pub sr: f64,
    pub csa: f64,
    pub ssa: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parses_decimals_exactly() {
        let r: Ratio = "1.2".parse().unwrap();
        assert_eq!((r.numer(), r.denom()), (6, 5));
        assert_eq!("1".parse::<Ratio>().unwrap(), Ratio::integer(1));
        assert_eq!(".5".parse::<Ratio>().unwrap(), Ratio::new(1, 2));
        assert!("abc".parse::<Ratio>().is_err());
        assert!("-1".parse::<Ratio>().is_err());
        assert!("".parse::<Ratio>().is_err());
    }

    #[test]
    fn ratio_from_f64_is_exact_for_short_decimals() {
        assert_eq!(Ratio::try_from(1.2).unwrap(), Ratio::new(6, 5));
        assert_eq!(Ratio::try_from(1.4).unwrap().mul_div_ceil(10, 1), 14);
    }

    #[test]
    fn dataset_summary() {
        let ds = Dataset::from_pairs([("a", "1"), ("a", "2"), ("b", "3")]).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.l_max(), 2);
        assert_eq!(ds.key_count(), 2);
        assert_eq!(ds.counts().values().sum::<usize>(), ds.len());
    }

    #[test]
    fn empty_key_rejected() {
        assert!(Dataset::from_pairs([("", "x")]).is_err());
        assert!(Dataset::new(vec![Record::fake()]).is_err());
    }

    #[test]
    fn tsv_roundtrip_and_errors() {
        let text = "k1\tv1\nk1\tv2\n\nk2\tv3\n";
        let ds = Dataset::read_tsv(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 3);
        let mut out = Vec::new();
        ds.write_tsv(&mut out).unwrap();
        assert_eq!(out, b"k1\tv1\nk1\tv2\nk2\tv3\n");

        let err = Dataset::read_tsv("k1\tv1\nno-tab\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(Dataset::read_tsv("a\tb\tc\n".as_bytes()).is_err());
    }

    #[test]
    fn params_validation() {
        let mut p = Params::default();
        p.validate().unwrap();
        p.qa = Ratio::new(9, 10);
        assert!(p.validate().is_err());
        let p = Params {
            desired_overlap: Some(2),
            ..Params::default()
        };
        assert!(p.validate().is_err());
    }
}
