use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible fraction combination: {0}")]
    InfeasibleFractions(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("csv parse error at line {line}: {msg}")]
    CsvRow { line: u64, msg: String },

    #[error("malformed csv header: {0}")]
    CsvHeader(String),

    #[error("misaligned series: {0}")]
    Misaligned(String),

    #[error("innovation covariance not invertible at day index {day}")]
    SingularInnovation { day: usize },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty chain")]
    EmptyChain,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
