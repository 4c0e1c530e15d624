use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence `{id}` has length {len}, exceeding the configured max_len {max_len}")]
    SequenceTooLong { id: String, len: usize, max_len: usize },

    #[error("unknown lineage label `{label}`{}", record_suffix(.id))]
    UnknownLabel { label: String, id: Option<String> },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot train on an empty dataset")]
    EmptyDataset,

    #[error("incompatible weight sets: {0}")]
    IncompatibleShapes(String),

    #[error("aggregation needs at least one contribution")]
    EmptyContributionList,

    #[error("contribution {0} reports zero training samples")]
    ZeroSampleCount(usize),

    #[error("no data: {0}")]
    NoData(String),

    #[error("cannot evaluate on an empty test set")]
    EmptyTestSet,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("metrics need at least one example")]
    EmptyInput,

    #[error("synthetic spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

fn record_suffix(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" in record `{id}`"),
        None => String::new(),
    }
}
