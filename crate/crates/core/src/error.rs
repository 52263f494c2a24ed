use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid factor space: {0}")]
    FactorSpace(String),
    #[error("factor {factor} has value {value}, cardinality is {cardinality}")]
    FactorOutOfRange {
        factor: usize,
        value: usize,
        cardinality: usize,
    },
    #[error("unsupported mini-shapes resolution {0} (expected 16, 32 or 64)")]
    Resolution(usize),
    #[error("factor table: {0}")]
    FactorTable(String),
    #[error("labels: {0}")]
    Labels(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Metric(String),
    #[error("classifier: {0}")]
    Classifier(String),
    #[error("training aborted at step {step}: non-finite loss ({components})")]
    NonFiniteLoss { step: usize, components: String },
    #[error("selection: {0}")]
    Selection(String),
    #[error("spec file line {line}: {message}")]
    SpecFile { line: usize, message: String },
    #[error(transparent)]
    Tensor(#[from] dlab_tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
