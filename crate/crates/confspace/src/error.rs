use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration of order {order} exceeds the enumeration cap {cap}")]
    OrderCapExceeded { order: usize, cap: usize },

    #[error("non-finite value: {0}")]
    NonFiniteValue(String),

    #[error("duplicate point in configuration")]
    DuplicatePoint,

    #[error("function has unbounded support and the configuration is too large to enumerate ({order} points)")]
    UnboundedSupport { order: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("tensor grid limited to {max} total dimensions, requested {requested}")]
    TensorDimension { requested: usize, max: usize },

    #[error("negative realized {what} rate {rate}")]
    NegativeRate { what: &'static str, rate: f64 },

    #[error("majorant violated: acceptance ratio {ratio} for a {what} proposal")]
    MajorantViolated { what: &'static str, ratio: f64 },

    #[error("group size mismatch: expected {expected} points, got {got}")]
    GroupSizeMismatch { expected: usize, got: usize },

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("no automatic majorant for {0}; supply one or treat the model as non-simulable")]
    UnsupportedMajorant(String),

    #[error("at least 2 replicas are needed, got {0}")]
    InsufficientReplicas(usize),

    #[error("a term needs the correlation function at order {order} > {max}, but no closure is configured")]
    ClosureRequired { order: usize, max: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("snapshot at time {0} not recorded in every trajectory")]
    MissingSnapshot(f64),

    #[error("cached total rate {cached} drifted from recomputed {fresh}")]
    CacheDrift { cached: f64, fresh: f64 },
}

pub(crate) fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteValue(format!("{what} = {v}")))
    }
}
