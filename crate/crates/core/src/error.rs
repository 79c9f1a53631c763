use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: bad magic number at offset {offset}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        offset: u64,
        expected: u32,
        found: u32,
    },
    #[error("{path}: file truncated at offset {offset}")]
    TruncatedFile { path: PathBuf, offset: u64 },
    #[error("{images}: {image_count} images but {labels} (offset 4) holds {label_count} labels")]
    CountMismatch {
        images: PathBuf,
        labels: PathBuf,
        image_count: usize,
        label_count: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("inconsistent class count: expected {expected}, found {found}")]
    InconsistentClassCount { expected: usize, found: usize },
    #[error("every class count is zero")]
    AllEmpty,
    #[error("client {0} has an empty training set")]
    EmptyShard(usize),
    #[error("client {0} produced a non-finite update")]
    NonFiniteUpdate(usize),
    #[error("worker test set is empty")]
    EmptyTestSet,
    #[error("no worker coefficients to aggregate")]
    EmptyWorkerSet,
    #[error("worker pool exhausted: need {needed} distinct nodes, only {available} available")]
    WorkerPoolExhausted { needed: usize, available: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
