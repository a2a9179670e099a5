use crate::corpus::CorpusError;
use crate::evaluation::EvalError;
use crate::gateway::GatewayError;
use crate::store::StoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    /// A caller-supplied value violates an operation's precondition.
    #[error("precondition failed: {0}")]
    Precondition(String),
    /// Produced content failed validation (for example an empty trait text).
    #[error("validation failed: {0}")]
    Validation(String),
    /// The persona plus the new utterance does not fit the context budget.
    #[error("context overflow: persona {persona_tokens} + utterance {utterance_tokens} + reply reserve {reserve_tokens} tokens exceed the budget of {budget_tokens}")]
    ContextOverflow {
        persona_tokens: usize,
        utterance_tokens: usize,
        reserve_tokens: usize,
        budget_tokens: usize,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Coarse classification used by front ends to choose exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    NotFound,
    Conflict,
    Provider,
    Internal,
}

impl Error {
    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Corpus(_) | Error::Precondition(_) | Error::Validation(_) | Error::ContextOverflow { .. } => {
                ErrorClass::Validation
            }
            Error::Eval(_) => ErrorClass::Validation,
            Error::Gateway(e) => {
                if e.is_precondition() {
                    ErrorClass::Validation
                } else {
                    ErrorClass::Provider
                }
            }
            Error::Store(e) => e.class(),
            Error::Io { .. } | Error::Json { .. } => ErrorClass::Internal,
        }
    }
}
