use thiserror::Error;

pub type Result<T> = std::result::Result<T, BioconError>;

#[derive(Debug, Error)]
pub enum BioconError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("singular linear system ({context}); condition estimate {condition:.3e}")]
    Singular { context: String, condition: f64 },

    #[error("no sign change of the shooting residual for eta in [{lo:.3e}, {hi:.3e}] (residuals {f_lo:.3e}, {f_hi:.3e})")]
    BracketFailure { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("concentration became non-positive ({value:.3e}) at z = {z:.4}")]
    NonPositiveConcentration { z: f64, value: f64 },

    #[error("radiative flux q_s = {value:.3e} <= 0 at tau = {tau:.4}; swimming direction undefined")]
    NonPositiveFlux { tau: f64, value: f64 },

    #[error("source iteration did not converge in {iterations} sweeps (last change {last_change:.3e}, spectral radius estimate {spectral_radius:.3})")]
    SourceIteration { iterations: usize, last_change: f64, spectral_radius: f64 },

    #[error("substitution-consistency residual {residual:.3e} at z = {z:.4}")]
    Consistency { residual: f64, z: f64 },

    #[error("Newton iteration diverged after {iterations} steps (residual {residual:.3e}, R = {rayleigh:.4})")]
    NewtonDivergence { iterations: usize, residual: f64, rayleigh: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("continuation lost the branch at k = {k:.4}: {reason}")]
    BranchLost { k: f64, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}
