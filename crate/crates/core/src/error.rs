use thiserror::Error;

pub type Result<T, E = EmzError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EmzError {
    #[error("invalid potential: {0}")]
    Potential(String),

    #[error("potential evaluation produced a non-finite value at q = {q}")]
    Evaluation { q: f64 },

    #[error("insufficient confinement: exp(-beta V(+-{halfwidth})) = {weight:e} >= 1e-16; use a larger domain halfwidth")]
    Domain { halfwidth: f64, weight: f64 },

    #[error("ill-conditioned basis: Gram residual {residual:e} exceeds {limit:e}; use a smaller n_q or a larger domain")]
    IllConditioned { residual: f64, limit: f64 },

    #[error("conditioning error: {what} has condition number {cond:e} (limit {limit:e})")]
    Conditioning { what: String, cond: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("defective kernel block: {0}")]
    DefectiveKernel(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("integration blew up in replica {replica} at step {step}")]
    Integration { replica: usize, step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing dependency: {0}")]
    MissingDependency(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EmzError {
    /// Short machine-readable tag used in the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            EmzError::Potential(_) => "potential",
            EmzError::Evaluation { .. } => "evaluation",
            EmzError::Domain { .. } => "domain",
            EmzError::IllConditioned { .. } => "ill_conditioned",
            EmzError::Conditioning { .. } => "conditioning",
            EmzError::Argument(_) => "argument",
            EmzError::Precondition(_) => "precondition",
            EmzError::Numerical(_) => "numerical",
            EmzError::DefectiveKernel(_) => "defective_kernel",
            EmzError::Fit(_) => "fit",
            EmzError::Integration { .. } => "integration",
            EmzError::Config(_) => "config",
            EmzError::MissingDependency(_) => "missing_dependency",
            EmzError::Unsupported(_) => "unsupported",
            EmzError::Io(_) => "io",
            EmzError::Json(_) => "json",
        }
    }
}
