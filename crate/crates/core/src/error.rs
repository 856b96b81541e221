use thiserror::Error;

/// Errors raised by the linear algebra, optimizers and training harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A caller broke a precondition (shape mismatch, asymmetric input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative method failed or produced an unusable result.
    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    /// A parameter became non-finite after an update.
    #[error("diverged at step {step} in layer `{layer}`")]
    Divergence { step: u64, layer: String },

    /// Malformed external input (dataset files, configs).
    #[error("input error: {0}")]
    Input(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical { context: context.into(), detail: detail.into() }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Attaches a layer or matrix name to a numerical failure.
    pub fn in_context(self, name: &str) -> Self {
        match self {
            Error::Numerical { context, detail } => Error::Numerical { context: format!("{name}: {context}"), detail },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
