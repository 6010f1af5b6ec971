use alloc::string::String;
use alloc::vec::Vec;

use crate::area::{AreaCode, Year};

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("year {0} outside supported range")]
    YearOutOfRange(Year),
    #[error("duplicate observation for area {area} in {year}")]
    DuplicateKey { area: AreaCode, year: Year },
    #[error("non-finite value for area {area} in {year}")]
    NonFinite { area: AreaCode, year: Year },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("design matrix is rank deficient; dependent columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("signal covers {available} areas in {year}, {required} required")]
    InsufficientCoverage {
        year: Year,
        available: usize,
        required: usize,
    },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("invalid transaction: {0}")]
    InvalidRecord(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
