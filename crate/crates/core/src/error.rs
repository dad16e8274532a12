use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside [0, {t_final}]")]
    OutOfRange { t: f64, t_final: f64 },

    #[error("non-finite {what} for particle {particle} at t = {t}")]
    NonFinite {
        what: &'static str,
        particle: usize,
        t: f64,
    },

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("coupled dynamics need the ensemble positions")]
    MissingEnsemble,

    #[error("control file: {0}")]
    ControlFile(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
