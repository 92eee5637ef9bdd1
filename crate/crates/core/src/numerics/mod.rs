//! Dense linear algebra, distribution tails and the shared optimiser.

pub mod dist;
pub mod linalg;
pub mod optimize;
pub mod stats;

pub use dist::{tail_prob, Dist};
pub use linalg::{cholesky, least_squares, solve_linear, sym_eigen, LeastSquares, LuFactor, SymEigen};
pub use optimize::{minimize, FitOptions, minimize_multistart, MultiStart, MultiStartResult, OptOptions, OptProblem, OptResult};
