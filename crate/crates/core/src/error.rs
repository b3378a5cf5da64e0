use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A raster grid does not cover every lobe to +/- 4 sigma.
    #[error("grid does not cover lobes: {}", .truncated.join(", "))]
    Coverage { truncated: Vec<String> },

    /// A timetag stream was not time-ordered.
    #[error("stream not time-sorted at record {index}")]
    Unsorted { index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    /// A timetag file or table failed to parse.
    #[error("corrupt data at record {index}: {reason}")]
    Corrupt { index: usize, reason: String },

    #[error(
        "fit did not converge after {iterations} iterations (last visibility {last_visibility})"
    )]
    NoConvergence {
        iterations: usize,
        last_visibility: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
