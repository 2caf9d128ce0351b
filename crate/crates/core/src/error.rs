use thiserror::Error;

/// Errors produced anywhere in the identification / compensation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid hyperparameter {name} = {value} (must be finite and > 0)")]
    InvalidHyperparameter { name: &'static str, value: f64 },

    #[error("kernel matrix not positive definite after jitter fallback (last jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("hold-one-out likelihood needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("potential requires a {expected}-D position model, model has {got} features")]
    NotPositionModel { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("PD exploration unstable at t = {time:.3} s (|velocity| = {velocity:.3} rad/s exceeds {bound} rad/s)")]
    Unstable { time: f64, velocity: f64, bound: f64 },

    #[error("non-uniform timestamps at index {index}")]
    NonUniformTimestamps { index: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::NonFinite(_) | Error::Unstable { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
