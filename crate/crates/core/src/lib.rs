//! DC optimal power flow, KKT sensitivities, retail pricing and energy
//! burden analysis.

pub mod burden;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod opf;
pub mod pricing;
pub mod sensitivity;

pub use burden::{lmb_fd_check, lmb_matrix, static_burden, BurdenVector, LmbFdReport, LmbResult};
pub use error::{Error, Result};
pub use grid::{normalize, Bus, Generator, Line, Network};
pub use opf::{solve, OpfModel, OpfSolution, QpForm, SolverOptions, Theta};
pub use pricing::{lmps, LmpVector, RetailConfig, RetailPrices};
pub use sensitivity::{analyze, fd_oracle, RegularityDiagnostics, SensitivityRun, SolutionJacobian};
