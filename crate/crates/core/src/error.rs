use thiserror::Error;

use crate::condition::ConditionKind;
use crate::wire::WireError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("unknown {kind} condition `{id}`")]
    UnknownCondition { kind: ConditionKind, id: String },

    #[error("invalid guidance spec: {0}")]
    Spec(String),

    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),

    #[error("alignment undefined: {0}")]
    Alignment(String),

    #[error("sampling failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite latent after step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("server error {code}: {message}")]
    Remote { code: u16, message: String },

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that originate in a velocity backend or its transport
    /// rather than in user-supplied configuration.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Transport(_) | Error::Protocol(_) | Error::Remote { .. } | Error::Wire(_) => true,
            Error::NonFinite { .. } => true,
            Error::Step { source, .. } => source.is_backend(),
            _ => false,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::Step { .. } => e,
            e @ Error::NonFinite { .. } => e,
            e => Error::Step { step, source: Box::new(e) },
        }
    }
}
