use thiserror::Error;

/// Errors raised anywhere in the assessment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph node {node} references later node {input}")]
    GraphCycle { node: usize, input: usize },

    #[error("attention row {0} has no visible positions")]
    EmptyAttentionRow(usize),

    #[error("unknown symbol {symbol} (inventory size {inventory})")]
    UnknownSymbol { symbol: usize, inventory: usize },

    #[error("missing view: {0}")]
    MissingView(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (utterances {utterances:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        utterances: Vec<String>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::GraphCycle { .. } => "graph_cycle",
            Error::EmptyAttentionRow(_) => "empty_attention_row",
            Error::UnknownSymbol { .. } => "unknown_symbol",
            Error::MissingView(_) => "missing_view",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Checkpoint(_) => "checkpoint",
            Error::Corpus(_) => "corpus",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
