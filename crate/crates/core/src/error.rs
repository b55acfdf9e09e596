use thiserror::Error;

/// Location of a parse failure inside a text source (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },

    #[error("unsupported generator cost model at {location}: {message}")]
    UnsupportedCostModel { location: Location, message: String },

    #[error("non-positive income {income} at bus {bus}")]
    NonPositiveIncome { bus: usize, income: f64 },

    #[error("no income record for bus {0}")]
    MissingIncome(usize),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("network is disconnected: bus {0} is unreachable from bus 1")]
    DisconnectedNetwork(usize),

    #[error("reduced bus susceptance matrix is singular")]
    SingularBusMatrix,

    #[error("generators {first} and {second} at bus {bus} have different cost coefficients")]
    ConflictingColocatedGenerators {
        bus: usize,
        first: usize,
        second: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("equality constraint matrix has rank {rank} < {rows}")]
    RankDeficientEquality { rank: usize, rows: usize },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("problem appears unbounded: {0}")]
    Unbounded(String),

    #[error("solver hit the iteration limit ({iterations}); last KKT residual {residual:.3e}")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("solution has not converged (KKT residual {residual:.3e} > {tol:.1e})")]
    NotConverged { residual: f64, tol: f64 },

    #[error("KKT Jacobian is singular; degenerate inequality indices {degenerate:?}")]
    SingularJacobian { degenerate: Vec<usize> },

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),

    #[error("pricing model mismatch: {0}")]
    ModelMismatch(String),

    #[error("zero total demand over the horizon for {0}")]
    ZeroDenominator(String),

    #[error("missing time series: {0}")]
    MissingSeries(String),

    #[error("misaligned time series: {0}")]
    MisalignedSeries(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: Location { line, column },
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
