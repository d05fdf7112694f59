use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("mesh construction failed: {0}")]
    Construction(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },
    #[error("degenerate variation: {0}")]
    Degenerate(String),
    #[error("table load failed: {0}")]
    Load(#[from] LoadError),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("mesh hash mismatch: file {found:016x}, expected {expected:016x}")]
    HashMismatch { found: u64, expected: u64 },
    #[error("file truncated")]
    Truncated,
    #[error("malformed header: {0}")]
    Header(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_index(index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::Index { index, len })
    }
}
