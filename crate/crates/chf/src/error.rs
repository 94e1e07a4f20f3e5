use thiserror::Error;

/// Everything that can go wrong while building or running a flow.
#[derive(Debug, Error)]
pub enum ChfError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("divergence at step {step} (t = {t:.6}): {what}")]
    Divergence { step: usize, t: f64, what: String },

    #[error("projection degenerate at cell ({i}, {j}): |f| = {norm:.3e} < 0.5 (time step too large?)")]
    ProjectionDegenerate { i: usize, j: usize, norm: f64 },

    #[error("state corruption: {0}")]
    StateCorruption(String),

    #[error("linear solver: {0}")]
    Solver(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ChfError {
    /// Process exit status used by the command-line driver: 2 for runtime
    /// blow-ups, 3 for bad configuration or input files, 4 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ChfError::Divergence { .. } => 2,
            ChfError::ProjectionDegenerate { .. } => 2,
            ChfError::StateCorruption(_) => 2,
            ChfError::Config(_) => 3,
            ChfError::Io(_) => 3,
            ChfError::Solver(_) => 4,
        }
    }
}
