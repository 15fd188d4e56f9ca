use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric blow-up at t = {t}: {what} = {value:e} exceeds {limit:e}")]
    NumericBlowup {
        t: f64,
        what: String,
        value: f64,
        limit: f64,
    },

    #[error("singular control allocation: |v1| = {v1:e}")]
    AllocationSingular { v1: f64 },

    #[error("metric window [{t0}, {t1}] is not covered by trace spanning [{start}, {end}]")]
    Window { t0: f64, t1: f64, start: f64, end: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
