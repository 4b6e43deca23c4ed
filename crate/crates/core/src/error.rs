use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    Invalid { op: &'static str, detail: String },

    #[error("backward needs a scalar loss, got {0}")]
    NonScalarLoss(Shape),

    #[error("missing gradient for parameters: {}", .0.join(", "))]
    MissingGrad(Vec<String>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("non-finite activation after layer `{0}`")]
    NonFinite(String),

    #[error("network spec: {0}")]
    Spec(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error("benchmark: {0}")]
    Benchmark(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid { op, detail: detail.into() }
    }

    /// True for errors caused by bad user configuration rather than the
    /// environment (the CLI maps these to exit code 2).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Spec(_) | Error::Config(_))
    }
}
