use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("fanout {fanout} exceeds bucket count {buckets}")]
    FanoutExceedsBuckets { fanout: usize, buckets: usize },

    #[error("unknown hash identifier `{0}`")]
    UnknownHash(String),

    #[error("degree {degree} and bucket count {buckets} are both odd")]
    ParityError { degree: usize, buckets: usize },

    #[error("degree {degree} must be smaller than the bucket count {buckets}")]
    DegreeTooLarge { degree: usize, buckets: usize },

    #[error("bucket {bucket} would need a negative number of fake records")]
    NegativeFakeCount { bucket: usize },

    #[error("lender bucket {lender} has {available} slots, label for borrower {borrower} needs {needed}")]
    LenderTooSmall {
        lender: usize,
        borrower: usize,
        needed: usize,
        available: usize,
    },

    #[error("desired overlap {desired} cannot be realised: {reason}")]
    OverlapInfeasible { desired: usize, reason: String },

    #[error("bundle format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch in {0}")]
    ChecksumFailure(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("malformed bundle metadata: {0}")]
    MalformedMeta(String),

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),

    #[error("record {rid} failed to decrypt")]
    DecryptionFailure { rid: u64 },

    #[error("bucket id {id} out of range (bucket count {count})")]
    BucketIdOutOfRange { id: usize, count: usize },

    #[error("record not found")]
    NotFound,

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("record of {len} bytes does not fit the {width}-byte record width")]
    RecordTooWide { len: usize, width: usize },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors that indicate tampered or corrupted server data.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            Error::ChecksumFailure(_)
                | Error::TruncatedFile(_)
                | Error::DecryptionFailure { .. }
                | Error::VersionMismatch { .. }
                | Error::MalformedMeta(_)
                | Error::CorruptBundle(_)
        )
    }
}
