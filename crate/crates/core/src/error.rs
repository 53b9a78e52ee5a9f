use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("cannot sample from a signed (order {order}) kernel")]
    SignedKernelSampling { order: u32 },

    #[error("dimension {0} is not supported (only d <= 2)")]
    UnsupportedDimension(usize),

    #[error("generation {generation} is outside 1..={max}")]
    GenerationOutOfRange { generation: usize, max: usize },

    #[error("generation {generation}: weights are not a simplex row ({detail})")]
    SimplexViolation { generation: usize, detail: String },

    #[error("weight row has {weights} mixture entries but {components} samplers were given")]
    ComponentCountMismatch { weights: usize, components: usize },

    #[error("generation {requested} exceeds the brute-force expansion limit {limit}")]
    ExpansionTooLarge { requested: usize, limit: usize },

    #[error("input length mismatch for {what}: expected {expected}, found {found}")]
    SizeMismatch { what: &'static str, expected: usize, found: usize },

    #[error("missing input: {0}")]
    MissingInput(&'static str),

    #[error("bracketing failed: {0}")]
    Bracketing(String),

    #[error("training diverged at step {step}: loss {loss} vs initial {initial}")]
    TrainingDiverged { step: usize, loss: f64, initial: f64 },

    #[error("non-finite state at reverse step {step}")]
    NonFiniteState { step: usize },

    #[error("generation {generation}: {source}")]
    Generation {
        generation: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn at_generation(self, generation: usize) -> Self {
        Error::Generation { generation, source: Box::new(self) }
    }
}
