use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no valid patch position: {0}")]
    NoValidPatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("seed has zero spread")]
    DegenerateSeed,
    #[error("bundle error: {0}")]
    Bundle(String),
    #[error("empty sample")]
    EmptySample,
    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidRegion(_) | Error::Config(_) | Error::Shape(_) | Error::NoValidPatch(_)
        )
    }
}
