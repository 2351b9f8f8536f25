use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("parameter outside model domain: {0}")]
    ParamDomain(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("capability not available: {0}")]
    Capability(String),
    #[error("invalid usage: {0}")]
    Usage(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("quadrature did not converge on [{lo}, {hi}] (error estimate {estimate:e}): {message}")]
    Integration {
        message: String,
        lo: f64,
        hi: f64,
        estimate: f64,
    },
    #[error("invalid spectral density: {0}")]
    ModelValidity(String),
    #[error("matrix is indefinite: {0}")]
    Indefinite(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("circulant embedding failed: {0}")]
    EmbeddingFailure(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ParamDomain(_) => "param_domain",
            Error::Domain(_) => "domain",
            Error::Capability(_) => "capability",
            Error::Usage(_) => "usage",
            Error::Size(_) => "size",
            Error::Integration { .. } => "integration",
            Error::ModelValidity(_) => "model_validity",
            Error::Indefinite(_) => "indefinite",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::EmbeddingFailure(_) => "embedding_failure",
            Error::Numerical(_) => "numerical",
        }
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::ParamDomain(_) | Error::Domain(_) | Error::Usage(_) | Error::Size(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
