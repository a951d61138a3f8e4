use thiserror::Error;

use crate::{
    dependence::DependenceError, detector::DetectorError, edf::EdfError,
    factor_graph::FactorGraphError, metrics::MetricsError, nn::NnError, prep::PrepError,
    smile::SmileError, split::SplitError, synth::SynthError,
};

/// Top-level error. Module errors convert into it; the pipeline wraps them
/// with the stage that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Dependence(#[from] DependenceError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Smile(#[from] SmileError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    FactorGraph(#[from] FactorGraphError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit-code classes used by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Split(_) => ErrorClass::Config,
            Error::Nn(NnError::NonFinite { .. }) | Error::Smile(SmileError::Diverged { .. }) => {
                ErrorClass::Numeric
            }
            Error::FactorGraph(FactorGraphError::ZeroMessage { .. })
            | Error::FactorGraph(FactorGraphError::ZeroNormalizer { .. }) => ErrorClass::Numeric,
            Error::Detector(DetectorError::Nn(NnError::NonFinite { .. })) => ErrorClass::Numeric,
            Error::Synth(_) => ErrorClass::Config,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
