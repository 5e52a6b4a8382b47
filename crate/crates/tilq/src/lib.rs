//! Solvers and verifiers for time-inconsistent discrete-time stochastic
//! linear-quadratic control.
//!
//! Two time-consistent solution concepts are covered. The open-loop
//! equilibrium control, tied to one initial pair, is computed from a coupled
//! set of nonsymmetric generalized difference Riccati equations together
//! with a set of linear difference equations ([`open_loop`]). The linear
//! feedback equilibrium strategy, defined for every initial pair, is
//! computed from a set of symmetric generalized Riccati equations
//! ([`feedback`]). Both concepts can be certified independently of the
//! solvers by exact path enumeration over finitely supported noise
//! ([`verify`]), and the classic loss of Bellman optimality under
//! non-exponential discounting can be reproduced directly
//! ([`open_loop::demonstrate_inconsistency`]).

pub mod error;
pub mod feedback;
pub mod fixtures;
pub mod linalg;
pub mod open_loop;
pub mod problem;
pub mod report;
pub mod simulation;
pub mod test_support;
pub mod verify;

pub use error::{Error, Result};
pub use feedback::{assert_definite_case, reduce_to_standard, solve_feedback, FeedbackSolution};
pub use linalg::{is_psd, pinv, solve_consistency, Matrix, Tolerances, Vector};
pub use open_loop::{
    demonstrate_inconsistency, open_loop_gains, solve_open_loop, solve_standard_lq,
    OpenLoopSolution, StandardLqSolution,
};
pub use problem::{
    from_discounting, load_problem, DiscountKind, DiscountSpec, Family, InitialPair, Mode,
    ProblemData,
};
pub use simulation::{
    evaluate_cost, exact_expected_cost, mc_expected_cost, simulate, NoiseModel, NoisePath,
    PolicySpec, Trajectory,
};
pub use verify::{
    directional_derivative_check, verify_feedback, verify_open_loop, VerificationReport,
    VerifyOptions,
};
