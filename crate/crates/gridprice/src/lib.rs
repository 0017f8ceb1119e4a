//! Adaptive incentive pricing for network-constrained electricity markets.
//!
//! A system operator serves price-taking users over a DC network. The
//! cost of serving a demand profile is the optimal value of a dispatch
//! linear program, a convex but nonsmooth function of demand, and its
//! subgradients are the locational marginal prices. The operator never
//! sees the users' disutility functions; it only broadcasts prices,
//! observes the demand they induce, and drifts the prices toward the
//! marginal system cost:
//!
//! ```text
//! dp/dt ∈ ∂J(x*(p)) - p
//! ```
//!
//! The unique equilibrium of this dynamic aligns the users' private
//! optima with the social-welfare optimum, and the crate ships the
//! instruments to verify that claim numerically: an LP solver with
//! certified duals, an explicit Euler integrator with Lyapunov
//! diagnostics, and brute-force planner oracles that are independent of
//! the solver machinery.
//!
//! The narrative guide lives in `book/`; its code snippets compile and
//! run as doc-tests of this crate.

pub mod cli;
pub mod dispatch;
pub mod dynamics;
pub mod grid;
pub mod lp;
pub mod oracle;
pub mod users;

pub use dispatch::{
    evaluate_cost, subgradient_check, welfare_cost, BindingConstraint, DemandProfile,
    DispatchError, DispatchResult,
};
pub use dynamics::{
    lyapunov_series, run, step, PriceProfile, RunConfig, RunStatus, StepRecord, Trajectory,
};
pub use grid::{
    build_ptdf, validate_case, CaseTemplate, Generator, GridCase, GridError, Line, PtdfMatrix,
    UserParams, ValidationReport, Violation,
};
pub use lp::{dual_vector, solve_lp, LpError, LpProblem, LpSolution, LpStatus};
pub use oracle::{
    grid_search, joint_lp_kkt_check, KktReport, OracleError, OracleMethod, PlannerSolution,
    SearchBox,
};
pub use users::{Disutility, QuadraticDisutility, UserError, UserSet};

// Compile and run the guide's code blocks as doc-tests so the book can
// never drift from the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(unused)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Network, "../../../book/src/network.md");
    chapter!(Dispatch, "../../../book/src/dispatch.md");
    chapter!(Users, "../../../book/src/users.md");
    chapter!(Dynamics, "../../../book/src/dynamics.md");
    chapter!(Oracle, "../../../book/src/oracle.md");
    chapter!(CliGuide, "../../../book/src/cli.md");
}
