use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    /// An exact computation would exceed its configured work limit.
    #[error("capacity exceeded: {what} needs {required}, limit is {limit}{hint}")]
    Capacity {
        what: &'static str,
        required: u128,
        limit: u128,
        hint: &'static str,
    },

    #[error("infeasible fractional point: |x|_1 = {l1} exceeds k = {k}")]
    Infeasible { l1: f64, k: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
