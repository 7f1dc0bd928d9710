use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the subsystem that raises
/// them; messages are written for the operator reading a failed run.
#[derive(Debug, Clone, Error)]
pub enum Error {
    // Shape and input validation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value produced at iteration {iteration}: {context}")]
    NonFinite { iteration: usize, context: String },

    // Dense kernels.
    #[error("asymmetric input: |a[{row},{col}] - a[{col},{row}]| = {delta:e} exceeds tolerance")]
    Asymmetric { row: usize, col: usize, delta: f64 },
    #[error("not positive definite: pivot {pivot:e} at index {index} is below tolerance")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    // Gram-recovery solver.
    #[error("insufficient rows for basis: need at least {needed} rows, system has {rows}")]
    InsufficientRows { rows: usize, needed: usize },
    #[error("rank deficiency at step {step} (row {row}): {unknowns} unknowns against rank {rank} equations")]
    RankDeficiency {
        step: usize,
        row: usize,
        unknowns: usize,
        rank: usize,
    },
    #[error("inconsistent knowns: every branch died at step {step} (row {row}), worst residual {residual:e}")]
    InconsistentKnowns {
        step: usize,
        row: usize,
        residual: f64,
    },
    #[error("branch enumeration exceeded {limit} partial candidates; system is too ambiguous")]
    BranchExplosion { limit: usize },
    #[error("zero-mean truth: relative error is undefined")]
    ZeroMeanTruth,

    // Protocol simulators.
    #[error("hyperparameters rejected: {0}")]
    Hyperparams(String),
    #[error("envelope sealed: observer {observer} is not among the key holders")]
    EnvelopeSealed { observer: String },
    #[error("transcript for {observer} lacks a {kind} event{}", iteration.map(|k| format!(" at iteration {k}")).unwrap_or_default())]
    MissingEvent {
        observer: String,
        kind: String,
        iteration: Option<usize>,
    },

    // Regression attacks.
    #[error("rank deficient: inject fake features to restore full sample rank ({rank} of {needed})")]
    NeedFakeFeatures { rank: usize, needed: usize },
    #[error("sigmoid value {value} outside invertible range [{lo}, {hi}]")]
    SigmoidRange { value: f64, lo: f64, hi: f64 },
    #[error("insufficient independent d vectors: rank {rank} of {needed} after {pairs} iteration pairs")]
    InsufficientResiduals {
        rank: usize,
        needed: usize,
        pairs: usize,
    },
    #[error("insufficient independent weight differences: rank {rank} of {needed} after {pairs} rounds")]
    InsufficientWeightDiffs {
        rank: usize,
        needed: usize,
        pairs: usize,
    },

    // Tree training and attack.
    #[error("tree configuration rejected: {0}")]
    TreeConfig(String),
    #[error("no jump found while probing node {node} on feature {feature}")]
    NoJumpFound { node: usize, feature: usize },

    // Workbench.
    #[error("dataset error at line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("configuration rejected: {0}")]
    Config(String),
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
