//! Independent certification of the planner's optimum.
//!
//! The price dynamic claims to land on the minimizer of the welfare cost
//! `C(x) = Σ f_i(x_i) + J(x)`. This module checks that claim by means
//! that deliberately avoid the simplex/dual machinery used to drive the
//! dynamic: a brute-force grid search over the demand box (exact up to
//! the grid pitch, tractable for up to three users) and a first-order
//! certificate that combines the subgradient residual with one-sided
//! directional probes of `C`, which stay meaningful at kinks where a
//! plain gradient test would not.

use rayon::prelude::*;
use serde::Serialize;

use crate::dispatch::{welfare_cost, DemandProfile, DispatchError};
use crate::grid::{GridCase, PtdfMatrix};
use crate::users::{Disutility, UserSet};

/// Probe displacement in MW for the directional minimality checks.
const PROBE_STEP: f64 = 1e-4;
/// Allowed first-order decrease before a probe counts as a failure.
const PROBE_SLACK: f64 = 1e-6;

/// How the planner solution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OracleMethod {
    GridSearch,
    JointLp,
}

/// A certified (up to pitch) minimizer of the welfare cost.
#[derive(Debug, Clone, Serialize)]
pub struct PlannerSolution {
    pub demand: Vec<f64>,
    pub welfare_cost: f64,
    pub method: OracleMethod,
}

/// Per-user search interval for the grid oracle.
#[derive(Debug, Clone)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchBox {
    /// A bracket containing each user's target consumption and every
    /// best response to prices in `[0, cmax]`:
    /// `[xbar - cmax/(2a) - 0.5, xbar + 0.5]`.
    ///
    /// Heuristic: counterflow congestion can price a bus outside
    /// `[0, cmax]`, in which case the minimizer may sit outside this
    /// box and a caller-supplied bracket is needed.
    pub fn bracketing(case: &GridCase) -> SearchBox {
        let cmax = case
            .generators
            .iter()
            .map(|g| g.cost)
            .fold(0.0f64, f64::max);
        let mut lower = Vec::with_capacity(case.users.len());
        let mut upper = Vec::with_capacity(case.users.len());
        for u in &case.users {
            lower.push(u.xbar - cmax / (2.0 * u.a) - 0.5);
            upper.push(u.xbar + 0.5);
        }
        SearchBox { lower, upper }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("grid search supports at most 3 users, case has {n}")]
    TooManyUsers { n: usize },
    #[error("pitch must be positive")]
    BadPitch,
    #[error("search box must contain the target consumption of user {user}")]
    BoxExcludesTarget { user: usize },
    #[error("box dimensions do not match the user count")]
    BoxMismatch,
    #[error("no servable point in the search grid")]
    NoServablePoint,
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
}

/// Exhaustively minimize the welfare cost over a grid.
///
/// Unservable grid points score infinity. Evaluation is parallel; ties
/// resolve to the lexicographically smallest grid point, so the result
/// does not depend on scheduling.
pub fn grid_search<D: Disutility + Sync>(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    users: &UserSet<D>,
    search: &SearchBox,
    pitch: f64,
    voll: Option<f64>,
) -> Result<PlannerSolution, OracleError> {
    let n = case.users.len();
    if n > 3 {
        return Err(OracleError::TooManyUsers { n });
    }
    if !(pitch > 0.0) || !pitch.is_finite() {
        return Err(OracleError::BadPitch);
    }
    if search.lower.len() != n || search.upper.len() != n {
        return Err(OracleError::BoxMismatch);
    }
    for (i, u) in case.users.iter().enumerate() {
        if !(search.lower[i] <= u.xbar && u.xbar <= search.upper[i]) {
            return Err(OracleError::BoxExcludesTarget { user: i });
        }
    }

    let counts: Vec<usize> = (0..n)
        .map(|i| ((search.upper[i] - search.lower[i]) / pitch).floor() as usize + 1)
        .collect();
    let total: usize = counts.iter().product();

    let point_of = |index: usize| -> Vec<f64> {
        let mut digits = Vec::with_capacity(n);
        let mut rest = index;
        for &c in counts.iter().rev() {
            digits.push(rest % c);
            rest /= c;
        }
        digits.reverse();
        digits
            .iter()
            .enumerate()
            .map(|(i, &d)| search.lower[i] + d as f64 * pitch)
            .collect()
    };

    // (cost, index) with a total order so the parallel reduction is
    // associative; index order equals lexicographic point order
    let best = (0..total)
        .into_par_iter()
        .map(|index| {
            let x = DemandProfile(point_of(index));
            let cost = welfare_cost(case, ptdf, users, &x, voll).unwrap_or(f64::INFINITY);
            (cost, index)
        })
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| {
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );

    if !best.0.is_finite() {
        return Err(OracleError::NoServablePoint);
    }

    Ok(PlannerSolution {
        demand: point_of(best.1),
        welfare_cost: best.0,
        method: OracleMethod::GridSearch,
    })
}

/// One directional probe of the welfare cost.
#[derive(Debug, Clone, Serialize)]
pub struct DirectionalProbe {
    pub user: usize,
    /// Signed displacement applied to this user's demand.
    pub step: f64,
    /// `C(x + step e_i) - C(x)`; infinite when the probe point is unservable.
    pub cost_delta: f64,
    pub passed: bool,
}

/// First-order optimality report at a demand profile.
#[derive(Debug, Clone, Serialize)]
pub struct KktReport {
    /// Stationarity residual `max_i |lmp_i + grad f_i(x_i)|`.
    pub residual: f64,
    pub probes: Vec<DirectionalProbe>,
    /// True when every directional probe passed.
    pub passed: bool,
}

/// Check the planner optimality condition at `x`: the subgradient
/// stationarity residual plus one-sided probes `C(x ± h e_i) >= C(x) - 1e-6`.
pub fn joint_lp_kkt_check<D: Disutility>(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    users: &UserSet<D>,
    x: &DemandProfile,
    voll: Option<f64>,
) -> Result<KktReport, DispatchError> {
    let dispatch = crate::dispatch::evaluate_cost(case, ptdf, x, voll)?;
    let grads = users
        .gradient_profile(x)
        .map_err(|e| DispatchError::Internal(e.to_string()))?;
    let residual = dispatch
        .lmp
        .iter()
        .zip(&grads)
        .map(|(l, g)| (l + g).abs())
        .fold(0.0f64, f64::max);

    let c0 = welfare_cost(case, ptdf, users, x, voll)?;
    let mut probes = Vec::with_capacity(2 * x.len());
    for i in 0..x.len() {
        for &h in &[PROBE_STEP, -PROBE_STEP] {
            let mut shifted = x.0.clone();
            shifted[i] += h;
            let c = welfare_cost(case, ptdf, users, &DemandProfile(shifted), voll)
                .unwrap_or(f64::INFINITY);
            probes.push(DirectionalProbe {
                user: i,
                step: h,
                cost_delta: c - c0,
                passed: c >= c0 - PROBE_SLACK,
            });
        }
    }
    let passed = probes.iter().all(|p| p.passed);
    Ok(KktReport {
        residual,
        probes,
        passed,
    })
}
