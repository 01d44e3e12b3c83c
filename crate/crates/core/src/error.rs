use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty cluster")]
    EmptyCluster,
    #[error("index {index} out of range for cloud of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("rings required")]
    RingsRequired,
    #[error("ring index count {rings} does not match point count {points}")]
    RingLengthMismatch { rings: usize, points: usize },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("invalid calibration: {0}")]
    Calibration(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("fewer than two occupied distance bins")]
    InsufficientBins,
    #[error("non-positive point count in distance bin at {0} m")]
    NonPositiveCount(f64),
    #[error("non-decreasing fit (k = {0})")]
    NonDecreasingFit(f64),
    #[error("non-finite activation in {0}")]
    NonFinite(String),
    #[error("no ground-truth objects in dataset")]
    NoGroundTruth,
    #[error("no measured frames after {0} warm-up frames")]
    NoMeasuredFrames(usize),
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}
