use thiserror::Error;

/// Errors surfaced by the solver library. Budget exhaustion is always an
/// explicit error, never a silent truncation.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("instance error: {0}")]
    Instance(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("resource cap exceeded: {0} resources declared, at most 8 supported")]
    ResourceCap(usize),
    #[error("budget `{name}` exhausted: needed {needed}, limit {limit}")]
    Budget {
        name: &'static str,
        needed: usize,
        limit: usize,
    },
    #[error("transition invalid ({kind}): {clause}{}", witness.as_deref().map(|w| format!(" [{w}]")).unwrap_or_default())]
    InvalidTransition {
        kind: &'static str,
        clause: &'static str,
        witness: Option<String>,
    },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("search gave up: {0}")]
    SearchFailed(String),
}

pub type Result<T> = std::result::Result<T, SolveError>;

impl SolveError {
    pub fn instance(msg: impl Into<String>) -> Self {
        SolveError::Instance(msg.into())
    }
    pub fn invariant(msg: impl Into<String>) -> Self {
        SolveError::Invariant(msg.into())
    }
    pub fn budget(name: &'static str, needed: usize, limit: usize) -> Self {
        SolveError::Budget {
            name,
            needed,
            limit,
        }
    }
    pub fn bad_transition(
        kind: &'static str,
        clause: &'static str,
        witness: Option<String>,
    ) -> Self {
        SolveError::InvalidTransition {
            kind,
            clause,
            witness,
        }
    }
}
