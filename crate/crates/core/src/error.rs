use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the simulation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("action index {index} out of range for {num_actions} actions")]
    ActionOutOfRange { index: usize, num_actions: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("grid posterior supports d = 2 only, got d = {0}")]
    UnsupportedDimension(usize),

    #[error("degenerate posterior: every log-weight is -inf")]
    DegeneratePosterior,

    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),

    #[error("non-finite loss at iterate {iterate:?}")]
    NonFinite { iterate: Vec<f64> },

    #[error("run {run_index}, t = {t}: {source}")]
    Episode {
        run_index: u64,
        t: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by bad input configuration rather than a
    /// failure during the run itself.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::NotPositiveDefinite(_)
            | Error::UnsupportedDimension(_)
            | Error::ActionOutOfRange { .. } => true,
            Error::Episode { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn in_episode(self, run_index: u64, t: usize) -> Self {
        Error::Episode {
            run_index,
            t,
            source: Box::new(self),
        }
    }
}
