use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of a distribution kernel.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    /// The latent state does not have the shape the model specification implies.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sampler initialization failed: non-finite log density in block `{block}`")]
    Init { block: String },

    /// Input that is well-formed but unusable (no observed cells, duplicate dates, ...).
    #[error("{0}")]
    Data(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Coarse machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) | Error::Shape(_) => "model",
            Error::InvalidPanel(_) | Error::Data(_) => "data",
            Error::Init { .. } => "sampler",
            Error::Parse(_) | Error::Csv(_) => "format",
            Error::Io(_) => "io",
        }
    }
}
