use thiserror::Error;

/// Errors raised by the surveillance model, estimators and planners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("record {record}: unknown {echelon} node `{node}`")]
    UnknownNode {
        record: usize,
        echelon: &'static str,
        node: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("test node `{node}` has no records; build its sourcing row with bootstrap_sourcing")]
    NoRecordsForNode { node: String },

    #[error("dataset is empty: {0}")]
    EmptyDataset(&'static str),

    #[error("weights are degenerate: {0}")]
    DegenerateWeights(&'static str),

    #[error("log-target is not finite at initialization (node `{node}`)")]
    NonFiniteTarget { node: String },

    #[error("data matrix column {column} vanished after normalization")]
    DegenerateColumn { column: usize },

    #[error("quadrature supports only 1x1 networks, got {test_nodes}x{supply_nodes}")]
    UnsupportedDimension {
        test_nodes: usize,
        supply_nodes: usize,
    },

    #[error("{count} candidate plans exceed the enumeration cap of {cap}; use the greedy planner")]
    PlanCountExceeded { count: u128, cap: u128 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteTarget { .. }
            | Error::DegenerateColumn { .. }
            | Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
