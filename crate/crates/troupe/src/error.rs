use thiserror::Error;

/// Why a transaction aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum AbortReason {
    /// A read-set record version changed (or was locked by another
    /// committer) between read and validation.
    ReadValidation,
    /// A scanned relation (or index bucket) saw a structural change
    /// between scan and validation.
    ScanValidation,
    /// Two unsynchronized sub-invocations had conflicting footprints.
    RacySiblings,
    /// A method body raised an error somewhere in the invocation tree.
    ApplicationError,
    /// An invocation was denied by the access rule set.
    AccessDenied,
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AbortReason::ReadValidation => "read-validation",
            AbortReason::ScanValidation => "scan-validation",
            AbortReason::RacySiblings => "racy-siblings",
            AbortReason::ApplicationError => "application-error",
            AbortReason::AccessDenied => "access-denied",
        };
        write!(f, "{s}")
    }
}

/// Outcome of committing a root transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitResult {
    Committed(u64),
    Aborted(AbortReason),
}

impl CommitResult {
    pub fn is_committed(&self) -> bool {
        matches!(self, CommitResult::Committed(_))
    }

    pub fn tid(&self) -> Option<u64> {
        match self {
            CommitResult::Committed(t) => Some(*t),
            CommitResult::Aborted(_) => None,
        }
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        match self {
            CommitResult::Committed(_) => None,
            CommitResult::Aborted(r) => Some(*r),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EngineError {
    #[error("actor type `{0}` already registered")]
    DuplicateType(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("actor `{0}` already exists")]
    DuplicateActor(String),
    #[error("unknown actor type `{0}`")]
    UnknownType(String),
    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("unknown method `{method}` on actor type `{type_name}`")]
    UnknownMethod { type_name: String, method: String },
    #[error("arity mismatch calling `{method}`: expected {expected}, got {got}")]
    ArityMismatch {
        method: String,
        expected: usize,
        got: usize,
    },
    #[error("administrative operation `{0}` called from an actor method body")]
    CalledFromMethodBody(&'static str),
    #[error("access denied: {caller} -> {target}")]
    AccessDenied { caller: String, target: String },
    #[error("relation `{0}` already exists in actor")]
    DuplicateRelation(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("parent context is not active")]
    ParentNotActive,
    #[error("transaction is not active")]
    TxnNotActive,
    #[error("future does not belong to this transaction")]
    ForeignFuture,
    #[error("unsupported isolation level `{0}` (only serializable is implemented)")]
    UnsupportedIsolation(String),
    #[error("deadlock detected: get() on a future the current stream must produce")]
    DeadlockDetected,
    #[error("transaction aborted: {0}")]
    Aborted(AbortReason),
    #[error("session already open for cart")]
    SessionAlreadyOpen,
    #[error("unknown session {0}")]
    UnknownSession(i64),
    #[error("unknown item {0} in inventory")]
    UnknownItem(i64),
    #[error("access rules do not compose: {0}")]
    RuleConflict(String),
    #[error("syntax error at line {line}, column {col}: found `{found}`, expected {expected}")]
    Syntax {
        line: usize,
        col: usize,
        found: String,
        expected: String,
    },
    #[error("io error: {0}")]
    Io(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Application(String),
}

impl EngineError {
    /// The abort reason a failure maps to when it poisons a transaction.
    pub fn abort_class(&self) -> AbortReason {
        match self {
            EngineError::AccessDenied { .. } => AbortReason::AccessDenied,
            EngineError::Aborted(r) => *r,
            _ => AbortReason::ApplicationError,
        }
    }
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;
