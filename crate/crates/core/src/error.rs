use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Load { line: usize, message: String },

    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },

    #[error("cell (y={y}, z={z}) needs {needed} examples but only {available} are available")]
    Capacity {
        y: u8,
        z: u8,
        needed: usize,
        available: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{stage}: non-finite loss at epoch {epoch}, step {step}")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("cannot estimate weights: cell (y={y}, z={z}) is empty")]
    Estimation { y: u8, z: u8 },

    #[error("metric undefined: {}", unavailable.join(", "))]
    MetricUndefined { unavailable: Vec<String> },

    #[error("{predictions} predictions for {examples} examples")]
    Alignment { predictions: usize, examples: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
