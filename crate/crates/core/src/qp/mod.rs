//! The weight-fitting quadratic program: assembly, solution, certification.

pub mod assembly;
pub mod kkt;
pub mod solver;

pub use assembly::{
    assemble_b, assemble_b_empirical, assemble_b_exact, assemble_h, build_problem, jitter_duplicates, QpProblem,
    DEFAULT_QUAD_POINTS,
};
pub use kkt::{verify_kkt, KktReport};
pub use solver::{ones_objective, project_simplex, solve_qp, QpSolution, SolverMethod, SolverOptions};
