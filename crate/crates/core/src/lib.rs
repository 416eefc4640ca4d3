//! Multi-block ADMM solvers with a per-iteration certificate engine.
//!
//! The crate solves linearly coupled block problems
//!
//! ```text
//! minimize   f_1(x_1) + ... + f_N(x_N)
//! subject to A_1 x_1 + ... + A_N x_N = b,   x_i in X_i,
//! ```
//!
//! with three outer iterations (plain Gauss-Seidel ADMM, a perturbed
//! variant that regularizes blocks 2..N around a fixed anchor, and the
//! sharing-problem specialization with an identity last block), and it
//! mechanically checks the inequalities that govern their sublinear
//! convergence: per-iteration decrease and subgradient bounds on the
//! augmented Lagrangian, the dual/primal coupling identities, and the
//! ergodic objective/feasibility bounds against exact oracle solutions.
//!
//! Modules:
//! - [`problem`]: block functions, constraint sets, and the problem type.
//! - [`subproblem`]: inner solvers for a single block minimization.
//! - [`solver`]: the three outer iterations, traces, ergodic averages.
//! - [`diagnostics`]: augmented Lagrangian, KKT residuals, certificates.
//! - [`oracle`]: exact reference solutions for small instances.
//! - [`instances`]: deterministic seeded test-problem generators.
//! - [`io`]: the on-disk problem/oracle format.

pub mod block_vec;
pub mod diagnostics;
pub mod instances;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod solver;
pub mod subproblem;

pub use block_vec::BlockVector;
pub use problem::{BlockFunction, BlockSpec, ConstraintSet, ProblemSpec};
pub use solver::{IterateState, IterationDelta, Mode, SolverConfig, Trace};
