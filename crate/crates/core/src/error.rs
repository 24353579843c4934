use crate::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by front-ends to pick stable exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Protocol,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("singular system: condition estimate {condition:.3e} exceeds {limit:.1e}")]
    SingularSystem { condition: f64, limit: f64 },

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("biased set mismatch in batch starting at token {first_token}: expected {expected:?}, API returned {returned:?}")]
    BiasedSetMismatch {
        first_token: TokenId,
        expected: Vec<TokenId>,
        returned: Vec<TokenId>,
    },

    #[error("reference top token {token} displaced from the biased response after {attempts} attempts")]
    TopTokenDisplaced { token: TokenId, attempts: usize },

    #[error("reference tokens {0:?} missing from response")]
    MissingTokens(Vec<TokenId>),

    #[error("reference tokens shifted: expected top-2 {expected:?}, observed {observed:?}")]
    ReferenceTokensShifted {
        expected: (TokenId, TokenId),
        observed: Vec<TokenId>,
    },

    #[error("call budget of {budget} exhausted before any output completed")]
    BudgetExhausted { budget: u64 },

    #[error("unique prompts exhausted after {used} outputs without a rank plateau")]
    VocabExhausted { used: usize },

    #[error("output lies outside the stored image (max log-prob discrepancy {discrepancy:.3e})")]
    OutOfImage { discrepancy: f64 },

    #[error("unknown replica {replica} (model has {n_replicas})")]
    UnknownReplica { replica: usize, n_replicas: usize },

    #[error("bias {bias} on token {token} exceeds beta_max {beta_max}")]
    BiasTooLarge {
        token: TokenId,
        bias: f64,
        beta_max: f64,
    },

    #[error("requested k={k} exceeds k_max={k_max}")]
    KTooLarge { k: usize, k_max: usize },

    #[error("bad token id {0}")]
    BadTokenId(String),

    #[error("capability mismatch: {0}")]
    CapabilityMismatch(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("authentication failed: {0}")]
    Auth(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::SingularSystem { .. }
            | Error::NumericalInstability(_)
            | Error::DegenerateInput(_)
            | Error::OutOfImage { .. }
            | Error::VocabExhausted { .. } => ErrorClass::Numerical,
            Error::BiasedSetMismatch { .. }
            | Error::TopTokenDisplaced { .. }
            | Error::MissingTokens(_)
            | Error::ReferenceTokensShifted { .. }
            | Error::BudgetExhausted { .. }
            | Error::CapabilityMismatch(_)
            | Error::Protocol(_)
            | Error::Auth(_)
            | Error::Transport(_) => ErrorClass::Protocol,
            _ => ErrorClass::Validation,
        }
    }

    /// Machine-readable code used on the wire for request validation failures.
    pub fn wire_code(&self) -> Option<&'static str> {
        match self {
            Error::BiasTooLarge { .. } => Some("bias_too_large"),
            Error::KTooLarge { .. } => Some("k_too_large"),
            Error::BadTokenId(_) => Some("bad_token_id"),
            Error::UnknownReplica { .. } => Some("unknown_replica"),
            _ => None,
        }
    }
}
