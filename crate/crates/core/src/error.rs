use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("log-density is not finite at t = {t}")]
    NonFiniteDensity { t: f64 },
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("numerical integration failed: {0}")]
    IntegrationFailure(String),

    #[error("dataset is empty")]
    EmptyDataset,
    #[error("draw for index {index} has non-positive probability {prob}")]
    ZeroProbabilityDraw { index: usize, prob: f64 },
    #[error("censoring subsample needs r > n0 (r = {r}, n0 = {n0})")]
    InsufficientSubsampleSize { r: usize, n0: usize },
    #[error("subsample size r = {r} must exceed the number of uncensored units n0 = {n0}")]
    SubsampleTooSmall { r: usize, n0: usize },

    #[error("objective is not finite at the starting point")]
    ObjectiveNonFiniteAtStart,
    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    DidNotConverge { iterations: usize, grad_norm: f64 },

    #[error("every score norm is zero; probabilities cannot be normalized")]
    AllScoresZero,
    #[error("information matrix is singular or not negative definite")]
    SingularInformationMatrix,
    #[error("estimated Hessian matrix M-hat is singular or not negative definite")]
    SingularMHat,

    #[error("dataset has no censored units")]
    NoCensoredUnits,
    #[error("dataset has no uncensored units")]
    NoUncensoredData,
    #[error("subsample contains no uncensored units")]
    NoUncensoredDraws,
    #[error("pilot estimation failed: {0}")]
    PilotFailed(String),

    #[error("rejection sampling budget exceeded (acceptance rate below 0.1%)")]
    RejectionBudgetExceeded,
    #[error("censoring-rate calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("input file contains no data rows")]
    EmptyFile,

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteDensity { .. }
                | Error::NonFiniteValue(_)
                | Error::IntegrationFailure(_)
                | Error::ObjectiveNonFiniteAtStart
                | Error::DidNotConverge { .. }
                | Error::AllScoresZero
                | Error::SingularInformationMatrix
                | Error::SingularMHat
                | Error::NoUncensoredDraws
                | Error::PilotFailed(_)
                | Error::RejectionBudgetExceeded
                | Error::CalibrationFailed(_)
        )
    }
}
