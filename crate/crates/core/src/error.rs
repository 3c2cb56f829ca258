use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("workload carries no MAC-bearing operations")]
    EmptyWorkload,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("inner dimension {inner} risks 32-bit accumulator overflow (limit {limit})")]
    OverflowRisk { inner: usize, limit: usize },

    #[error("functional execution does not support `{0}` (multi-stage or windowed model)")]
    UnsupportedFunctionalModel(String),

    #[error("resource overflow: {resource} needs {needed} but budget is {budget}")]
    Resource {
        resource: String,
        needed: u64,
        budget: u64,
    },

    #[error("no configuration satisfies the resource budget")]
    NoFeasibleConfig,

    #[error("analytical model diverges from trace: {0}")]
    ModelDivergence(String),

    #[error("invalid accelerator spec: {0}")]
    InvalidSpec(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Io(std::io::Error::other(format!("csv: {other:?}"))),
        }
    }
}
