use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("empty subnet")]
    EmptySubnet,

    #[error("empty selected subnet")]
    EmptySelectedSubnet,

    #[error("operator {index}: invalid {field}: {reason}")]
    InvalidOperator {
        index: usize,
        field: &'static str,
        reason: String,
    },

    #[error("invalid accelerator config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("infeasible tiling: {0}")]
    InfeasibleTiling(String),

    #[error("no feasible tiling for operator {op_index}")]
    NoFeasibleTiling { op_index: usize },

    #[error("search space too large: {cardinality} configs (limit {limit})")]
    SpaceTooLarge { cardinality: u128, limit: u128 },

    #[error("no feasible accelerator config in the search space")]
    NoFeasibleConfig,

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("channel index {index} out of range for {channels} channels")]
    ChannelOutOfRange { index: usize, channels: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoFeasibleTiling { .. } | Error::InfeasibleTiling(_) | Error::NoFeasibleConfig => {
                3
            }
            Error::SpaceTooLarge { .. } => 4,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
