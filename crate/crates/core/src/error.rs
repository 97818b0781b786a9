use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument {x} is below the Lambert W domain bound -1/e")]
    LambertDomain { x: f64 },

    #[error("invalid tolerance: {0}")]
    InvalidTolerance(&'static str),

    #[error("root is not bracketed on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("bisection did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("device {device}: local training latency {latency}s does not fit the {deadline}s deadline")]
    DeadlineViolated { device: usize, latency: f64, deadline: f64 },

    #[error("device {device}: cannot meet the upload rate even with the full band at maximum power")]
    Undeliverable { device: usize },

    #[error("device {device}: theta(mu) is undefined for an empty virtual queue")]
    SingularQueue { device: usize },

    #[error("minimum bandwidth shares sum to {demand} > 1")]
    BandwidthInfeasible { demand: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("device {device}: non-finite gradient at local step {step}")]
    NonFiniteGradient { device: usize, step: usize },

    #[error("invalid configuration `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("malformed IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), reason: reason.into() }
    }

    /// An I/O error that names the file involved.
    pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round { round, source: Box::new(self) }
    }
}

impl Error {
    /// Short machine-readable name of the variant; a round wrapper reports
    /// the class of its cause.
    pub fn class(&self) -> &'static str {
        match self {
            Error::LambertDomain { .. } => "lambert_domain",
            Error::InvalidTolerance(_) => "invalid_tolerance",
            Error::NoBracket { .. } => "no_bracket",
            Error::NoConvergence { .. } => "no_convergence",
            Error::DeadlineViolated { .. } => "deadline_violated",
            Error::Undeliverable { .. } => "undeliverable",
            Error::SingularQueue { .. } => "singular_queue",
            Error::BandwidthInfeasible { .. } => "bandwidth_infeasible",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::InvalidConfig { .. } => "invalid_config",
            Error::Parse { .. } => "parse",
            Error::Idx { .. } => "idx",
            Error::Round { source, .. } => source.class(),
            Error::Io(_) => "io",
        }
    }
}
