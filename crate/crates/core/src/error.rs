use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time {t} is outside the schedule domain [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("variance {value} is outside the invertible range ({lower}, {upper}]")]
    VarianceOutOfRange { value: f64, lower: f64, upper: f64 },

    #[error("transformed time {s} is outside the admissible range [{lower}, {upper}]")]
    TransformedTimeOutOfRange { s: f64, lower: f64, upper: f64 },

    /// The unregularized score (and the transform with c = 0) blow up where sigma(t) = 0.
    #[error("score is singular at t = {t} (sigma = 0)")]
    SingularTime { t: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("observation is not in the paired dataset; the conditional score is undefined there")]
    UndefinedObservation,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    /// `last_good` is the state at `node - 1`.
    #[error("trajectory diverged at node {node} (t = {t})")]
    Divergence { node: usize, t: f64, last_good: Vec<f64> },

    #[error("{} of the requested samples failed; first failure at sample {}: {}", .0.len(), .0[0].0, .0[0].1)]
    SampleFailures(Vec<(usize, Error)>),

    #[error("terminal state is {distance} from the nearest data point, not within tau = {tau}")]
    NotCollapsed { distance: f64, tau: f64 },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
