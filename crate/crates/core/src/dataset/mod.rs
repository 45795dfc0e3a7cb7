//! Labeling, class balancing, train/val/test splits, k-folds and the DIDM
//! matrix file format.

mod balance;
mod labels;
mod matfile;
mod split;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub use balance::{balance, BalanceMode};
pub use labels::{EndpointPattern, LabelManifest, LabelRule, TimeRange};
pub use matfile::{read_matrices, read_matrices_from, write_matrices, write_matrices_to, MatrixFile, DIDM_MAGIC, DIDM_VERSION};
pub use split::{kfold, split, split_manifest, Split, SplitFractions};

/// Class catalog for multi-class runs; id = index.
pub const CLASS_NAMES: [&str; 7] = [
    "benign",
    "web-attack",
    "botnet",
    "port-scan",
    "dos-ddos",
    "brute-force",
    "heartbleed-infiltration",
];

pub const BINARY_CLASS_NAMES: [&str; 2] = ["benign", "attack"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic {0:?}, expected \"DIDM\"")]
    BadMagic([u8; 4]),
    #[error("matrix file header truncated")]
    TruncatedHeader,
    #[error("unsupported matrix file version {0}")]
    VersionMismatch(u16),
    #[error("corrupt record {index}: {reason}")]
    CorruptRecord { index: u64, reason: String },
    #[error("dataset needs at least two classes (found only class {0})")]
    SingleClassDataset(u16),
    #[error("class {class} has {count} records, fewer than k={k}")]
    TooFewRecords { class: u16, count: usize, k: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("records have inconsistent shape: {0}")]
    ShapeMismatch(String),
    #[error("{}:{line}: {message}", path.as_ref().map_or("<manifest>".to_string(), |p| p.display().to_string()))]
    Manifest {
        path: Option<PathBuf>,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}
