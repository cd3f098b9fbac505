use thiserror::Error;

/// Errors raised by the tensor engine and its tape.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("binary cross-entropy domain violation: {0}")]
    BceDomain(String),
    #[error("loss must be a 1x1 tensor, got {0}x{1}")]
    NotScalar(usize, usize),
    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("variable handle {0} does not belong to this tape")]
    UnknownVar(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node index {index} out of range for graph with {num_nodes} nodes")]
    NodeOutOfRange { index: usize, num_nodes: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("feature rows must all have dimension {expected}, found {found}")]
    FeatureDim { expected: usize, found: usize },
    #[error("graph needs feature dimension >= 1")]
    EmptyFeatures,
    #[error("feature count {features} does not match node count {num_nodes}")]
    FeatureCount { features: usize, num_nodes: usize },
    #[error("marked pair ({0}, {1}) is invalid")]
    BadMarkedPair(usize, usize),
    #[error("letter index {0} out of range 0..26")]
    LetterOutOfRange(usize),
    #[error("cycle lengths must be >= 3, got [{0},{1}]")]
    CycleTooShort(usize, usize),
    #[error("malformed edge list: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WlError {
    #[error("initial coloring has {colors} entries for {nodes} nodes")]
    InitLength { colors: usize, nodes: usize },
    #[error("max_iter must be >= 1")]
    ZeroIterations,
    #[error("refinement did not stabilize within {0} iterations")]
    NotStable(usize),
    #[error("iteration {t} out of range 0..={max} for a {m}-cycle")]
    IterationOutOfRange { m: usize, t: usize, max: usize },
    #[error("cycle length must be >= 3, got {0}")]
    CycleTooShort(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("code vectors are linearly dependent; the Y/Z swap is not uniquely defined")]
    LinearlyDependent,
    #[error("active-bit count {0} outside 1..26")]
    BadActiveBits(usize),
    #[error("dimension must be >= 1")]
    ZeroDimension,
    #[error("could not draw a full-rank Gaussian sample")]
    RankDeficient,
    #[error("unknown encoding `{0}` (one_hot, haar, distributed[:j], gaussian[:n])")]
    UnknownKind(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Wl(#[from] WlError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("model error: {0}")]
    Model(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
