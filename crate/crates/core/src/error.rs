use alloc::boxed::Box;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, expected {expected:?} got {found:?}")]
    DimensionMismatch {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("matrix is rank deficient at column {column} (|r_jj| = {magnitude:e})")]
    RankDeficient { column: usize, magnitude: f64 },
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("basis is not orthonormal (||U^T U - I||_F = {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("local iterate diverged (||U||_F = {norm:e}); reduce the step size")]
    Divergence { norm: f64 },
    #[error("no clients were sampled")]
    EmptySample,
    #[error("labels contain a single class; both normal and anomalous samples are required")]
    SingleClass,
    #[error("too few samples: need at least {needed}, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("client {id}: {source}")]
    Client { id: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn for_client(self, id: usize) -> Self {
        match self {
            e @ Error::Client { .. } => e,
            e => Error::Client {
                id,
                source: Box::new(e),
            },
        }
    }
}
