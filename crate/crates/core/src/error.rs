use thiserror::Error;

/// Errors raised across the constitutive, learning and structural layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("return map did not converge after {iterations} iterations (residual {residual:e})")]
    ReturnMapDiverged { iterations: usize, residual: f64 },

    #[error("plane-stress condition not satisfied after {iterations} iterations (sig_zz {residual:e})")]
    PlaneStressDiverged { iterations: usize, residual: f64 },

    #[error("operation requires plane strain input")]
    RequiresPlaneStrain,

    #[error("unknown kind `{0}`")]
    UnknownKind(String),

    #[error("feature extractor `{0}` requires a history state")]
    MissingState(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cache was produced by a different weight version")]
    StaleCache,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("no steps selected by the evaluation mask")]
    EmptySelection,

    #[error("reference acoustic determinant must be positive, got {0:e}")]
    NonpositiveReference(f64),

    #[error("path generation failed: {0}")]
    GenerationFailed(String),

    #[error("path has only {0} increments")]
    TooFewIncrements(usize),

    #[error("step failed: {0}")]
    StepFailed(String),

    #[error("constitutive failure at element {element}: {source}")]
    AtElement {
        element: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("failure at path step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("parse error: {0}")]
    Parse(String),

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
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep { step, source: Box::new(self) }
    }

    pub fn at_element(self, element: usize) -> Self {
        Error::AtElement { element, source: Box::new(self) }
    }

    /// True when the failure originates in a numerical solve (as opposed to
    /// configuration, input or IO problems).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::ReturnMapDiverged { .. }
            | Error::PlaneStressDiverged { .. }
            | Error::NonFiniteLoss { .. }
            | Error::StepFailed(_)
            | Error::GenerationFailed(_) => true,
            Error::AtElement { source, .. } | Error::AtStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
