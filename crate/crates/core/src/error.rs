use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ZeroVarianceColumn: column {0} has (numerically) zero variance")]
    ZeroVarianceColumn(usize),

    #[error("NonFinite/empty input: {0}")]
    NonFinite(String),

    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),

    #[error("IndexOutOfRange: index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("DimensionTooSmall: need at least {min} variables, got {p}")]
    DimensionTooSmall { p: usize, min: usize },

    #[error("DegenerateRow: leave-two-out correlation row of variable {0} is zero (unscreened pure-noise feature?)")]
    DegenerateRow(usize),

    #[error("GroupTooSmall: group {0} has fewer than two members")]
    GroupTooSmall(usize),

    #[error("InvalidR: pruning size r = {r} must satisfy 1 <= r <= {groups}")]
    InvalidR { r: usize, groups: usize },

    #[error("NoParallelPairs: no pair of variables scored below the threshold 2*delta")]
    NoParallelPairs,

    #[error("RankZero: no eigenvalue of the representative block reached mu")]
    RankZero,

    #[error("EmptyGroup: group {0} is empty")]
    EmptyGroup(usize),

    #[error("RankDeficientLoadings: pure-row loading matrix is not of full column rank")]
    RankDeficientLoadings,

    #[error("SingularSigmaZ: estimated factor correlation matrix is singular")]
    SingularSigmaZ,

    #[error("DegenerateSplit: {0}")]
    DegenerateSplit(String),

    #[error("AllRemoved: pre-screening would remove every variable")]
    AllRemoved,

    #[error("InvalidScenario: {0}")]
    InvalidScenario(String),

    #[error("UniverseMismatch: estimate covers {estimate} variables, truth covers {truth}")]
    UniverseMismatch { estimate: usize, truth: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}
