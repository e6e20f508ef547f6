use thiserror::Error;

use crate::period::Period;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI and HTTP surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Forbidden,
    Conflict,
    NotFound,
    Storage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid horizon: years must be at least 1, got {0}")]
    InvalidHorizon(u32),
    #[error("duplicate {what}: {key}")]
    Duplicate { what: &'static str, key: String },
    #[error("duplicate claim: integration ({capability}, {client}) already recorded for {product}")]
    DuplicateClaim { product: String, capability: String, client: String },
    #[error("unknown {kind}: {id}")]
    NotFound { kind: &'static str, id: String },
    #[error("kpp goal must be 4 or 8, got {0}")]
    InvalidKppGoal(u32),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("illegal transition: {entity} {id} cannot go from {from} to {to}")]
    IllegalTransition { entity: &'static str, id: String, from: String, to: String },
    #[error("role mismatch: requires {required}, actor is {actual}")]
    RoleMismatch { required: String, actual: String },
    #[error("stale revision for {id}: expected {expected}, current {actual}")]
    StaleRevision { id: String, expected: u64, actual: u64 },
    #[error("stale old value: change request {cr} reverted to drafted; {detail}")]
    StaleChange { cr: String, detail: String },
    #[error("change request {cr} is {declared} but requires L2")]
    UnderLeveled { cr: String, declared: String },
    #[error("change request required: {entity} {id} is baselined")]
    ChangeRequestRequired { entity: &'static str, id: String },
    #[error("phase gate: {operation} requires fiscal year {fy} in {required}, currently {actual}")]
    PhaseGate { operation: &'static str, fy: i32, required: String, actual: String },
    #[error("budget fractions sum to {0}, exceeding 1")]
    OverAllocated(String),
    #[error("missing evidence: integration {0} has no evidence attached")]
    MissingEvidence(String),
    #[error("non-compliant product {product}: unmet policies [{unmet}]")]
    NonCompliant { product: String, unmet: String },
    #[error("snapshot for period {0} already frozen")]
    DuplicateSnapshot(Period),
    #[error("no snapshot frozen for period {0}")]
    MissingSnapshot(Period),
    #[error("unknown format {token:?}; supported: {supported}")]
    UnknownFormat { token: String, supported: String },
    #[error("period {0} outside the portfolio horizon")]
    OutsideHorizon(Period),
    #[error("empty period range")]
    EmptyRange,
    #[error("no portfolio exists yet")]
    NoPortfolio,
    #[error("corrupt store: {0}")]
    CorruptStore(String),
    #[error("incompatible store version {found}; expected {expected}")]
    IncompatibleStore { found: String, expected: String },
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Stable snake_case token for machine consumers.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidHorizon(_) => "invalid_horizon",
            Error::Duplicate { .. } => "duplicate",
            Error::DuplicateClaim { .. } => "duplicate_claim",
            Error::NotFound { .. } => "not_found",
            Error::InvalidKppGoal(_) => "invalid_kpp_goal",
            Error::Validation(_) => "validation",
            Error::IllegalTransition { .. } => "illegal_transition",
            Error::RoleMismatch { .. } => "role_mismatch",
            Error::StaleRevision { .. } => "stale_revision",
            Error::StaleChange { .. } => "stale_old_value",
            Error::UnderLeveled { .. } => "requires_l2",
            Error::ChangeRequestRequired { .. } => "change_request_required",
            Error::PhaseGate { .. } => "phase_gate",
            Error::OverAllocated(_) => "over_allocated",
            Error::MissingEvidence(_) => "missing_evidence",
            Error::NonCompliant { .. } => "non_compliant",
            Error::DuplicateSnapshot(_) => "duplicate_snapshot",
            Error::MissingSnapshot(_) => "missing_snapshot",
            Error::UnknownFormat { .. } => "unknown_format",
            Error::OutsideHorizon(_) => "outside_horizon",
            Error::EmptyRange => "empty_range",
            Error::NoPortfolio => "no_portfolio",
            Error::CorruptStore(_) => "corrupt_store",
            Error::IncompatibleStore { .. } => "incompatible_store",
            Error::Io(_) => "io",
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NotFound { .. } | Error::MissingSnapshot(_) | Error::NoPortfolio => {
                ErrorCategory::NotFound
            }
            Error::RoleMismatch { .. } => ErrorCategory::Forbidden,
            Error::StaleRevision { .. }
            | Error::StaleChange { .. }
            | Error::IllegalTransition { .. }
            | Error::Duplicate { .. }
            | Error::DuplicateClaim { .. }
            | Error::DuplicateSnapshot(_) => ErrorCategory::Conflict,
            Error::CorruptStore(_) | Error::IncompatibleStore { .. } | Error::Io(_) => {
                ErrorCategory::Storage
            }
            _ => ErrorCategory::Validation,
        }
    }

    pub(crate) fn not_found(kind: &'static str, id: impl ToString) -> Self {
        Error::NotFound { kind, id: id.to_string() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
