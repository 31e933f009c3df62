use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Every component assigns zero density to an observation.
    #[error("all component densities vanish at row {row}")]
    ZeroDensity { row: usize },

    #[error("invalid bracket [{a}, {b}]: f(a) = {fa}, f(b) = {fb} have the same sign")]
    InvalidBracket { a: f64, b: f64, fa: f64, fb: f64 },

    #[error("undefined moment: {0}")]
    UndefinedMoment(String),

    #[error("operation requires the {0} family")]
    WrongFamily(&'static str),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("{path}: row {row}, column '{column}': {msg}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        msg: String,
    },

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
