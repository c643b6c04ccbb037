use thiserror::Error;
use transport_sa::inference::InferenceError;
use transport_sa::{DataError, EstimatorError, PipelineError, SensitivityError, SimulationError};

/// Failures grouped by exit code: 2 configuration, 3 data, 4 fitting.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("fit failure: {0}")]
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Fit(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Schema(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::NegativeDelta { .. }
            | EstimatorError::NotDiscrete(_)
            | EstimatorError::LevelCount { .. }
            | EstimatorError::UnknownCovariate(_)
            | EstimatorError::UnknownArm(_) => Self::Config(e.to_string()),
            _ => Self::Fit(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Estimator(inner) => inner.into(),
            InferenceError::TooFewReplicates(_) | InferenceError::CrossFitNuisances | InferenceError::Level(_) => {
                Self::Config(e.to_string())
            }
            _ => Self::Fit(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Nuisance(_) => Self::Fit(e.to_string()),
            PipelineError::Folds(_) | PipelineError::Config(_) => Self::Config(e.to_string()),
            PipelineError::Estimator(inner) => inner.into(),
            PipelineError::Inference(inner) => inner.into(),
        }
    }
}

impl From<SensitivityError> for CliError {
    fn from(e: SensitivityError) -> Self {
        match e {
            SensitivityError::Pipeline(inner) => inner.into(),
            SensitivityError::TooManyViolations { .. } | SensitivityError::EmptyTable => Self::Fit(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::TooManyFailures { .. } => Self::Fit(e.to_string()),
            SimulationError::Data(_) => Self::Data(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Config(format!("cannot write output: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Config(format!("cannot write output: {e}"))
    }
}
