use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or parameter check failed inside a kernel or a layer.
    #[error("validation error{}: {reason}", at(.layer))]
    Validation { layer: Option<String>, reason: String },

    #[error("manifest error{}: {reason}", at(.layer))]
    Manifest { layer: Option<String>, reason: String },

    #[error("weight load error at layer `{layer}`: {reason}")]
    Load { layer: String, reason: String },

    #[error("conversion error at layer `{layer}`: {reason}")]
    Conversion { layer: String, reason: String },

    #[error("runtime error at layer `{layer}`: {reason}")]
    Runtime { layer: String, reason: String },

    /// A value that should sit on a quantization grid does not.
    #[error("integrity error at layer `{layer}`: {reason}")]
    Integrity { layer: String, reason: String },

    #[error("statistics error: {0}")]
    Stats(#[from] StatsError),

    #[error("energy model error: {0}")]
    Energy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at(layer: &Option<String>) -> String {
    match layer {
        Some(id) => format!(" at layer `{id}`"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(reason: impl Into<String>) -> Self {
        Error::Validation {
            layer: None,
            reason: reason.into(),
        }
    }

    pub(crate) fn manifest(layer: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Manifest {
            layer: Some(layer.into()),
            reason: reason.into(),
        }
    }

    /// Attaches a layer id to errors raised without one.
    pub fn in_layer(self, id: &str) -> Self {
        match self {
            Error::Validation { layer: None, reason } => Error::Validation {
                layer: Some(id.to_string()),
                reason,
            },
            Error::Manifest { layer: None, reason } => Error::Manifest {
                layer: Some(id.to_string()),
                reason,
            },
            other => other,
        }
    }
}

/// Failures of the histogram statistics. A layer hitting one of these is
/// flagged in reports rather than aborting the whole analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("histogram is empty")]
    Empty,
    #[error("agreement needs at least two categories, got {0}")]
    TooFewCategories(usize),
    #[error("{stat} needs at least {need} samples, got {got}")]
    TooFewSamples {
        stat: &'static str,
        need: u64,
        got: u64,
    },
    #[error("degenerate distribution (zero variance)")]
    Degenerate,
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("cannot form {chi} clusters from {n} values")]
    TooManyClusters { chi: usize, n: usize },
    #[error("no quantization step given for cluster {0}")]
    MissingClusterL(usize),
}
