use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("linearization error: {0}")]
    Linearization(String),
    #[error("eigen decomposition failed: {0}; fall back to coordinate scenario directions")]
    Modal(String),
    #[error("least-squares solve did not converge after {iterations} iterations (|r| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64, best: Vec<f64> },
    #[error("infeasible reference: {0}")]
    InfeasibleReference(String),
    #[error("Newton-Kleinman stalled, residual history {0:?}")]
    RiccatiStall(Vec<f64>),
    #[error("closed-loop matrix is not Hurwitz (max Re = {0})")]
    NotHurwitz(f64),
    #[error("singular Lyapunov operator: {0}")]
    SingularLyapunov(String),
    #[error("infeasible terminal set: {0}")]
    InfeasibleTerminal(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("plant abort at t = {t}: {reason}")]
    PlantAbort { t: f64, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
