use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no data")]
    NoData,

    #[error("unsorted input: {0}")]
    UnsortedInput(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("degenerate asset {0}: zero return variance")]
    DegenerateAsset(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("no common dates")]
    NoCommonDates,

    #[error("predictor undefined: {0}")]
    PredictorUndefined(String),

    #[error("kernel degenerate: {0}")]
    KernelDegenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Raw and scaled panels were combined, or a scaled panel was required.
    #[error("scaling mismatch: {0}")]
    ScalingMismatch(String),

    /// Numerator and denominator forecasts do not cover the same dates.
    #[error("date set mismatch for asset {0}")]
    DateSetMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
