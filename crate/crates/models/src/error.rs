use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ssf_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),
    #[error("optimization diverged (step size {step})")]
    Diverged { step: f64 },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("class {0} absent from training labels")]
    MissingClass(i8),
    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },
    #[error("feature count {found} does not match the model's {expected}")]
    FeatureCount { found: usize, expected: usize },
    #[error("fit failed at {} location(s); first: location {}: {}", .0.len(), .0[0].0, .0[0].1)]
    Locations(Vec<(usize, String)>),
    #[error("base model {id} failed: {source}")]
    Base {
        id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }
}

pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::shape(layer, detail)
}
