//! DCOPF system cost and locational marginal prices.
//!
//! [`evaluate_cost`] prices a demand profile by solving the dispatch
//! linear program: minimize generation cost subject to system balance,
//! PTDF line limits and generator capacities. The returned cost is the
//! convex (piecewise linear) value function of the demand, and the
//! returned LMP vector is one element of its subdifferential, assembled
//! from the optimal row duals: the balance multiplier plus the
//! PTDF-weighted congestion multipliers at each user's bus.
//!
//! At kinks of the value function the LP has several optimal dual
//! vertices and the element returned is the one belonging to the
//! terminating basis; any such element is a valid drift for the price
//! dynamic, which is formulated as a differential inclusion.

use serde::Serialize;

use crate::grid::{GridCase, PtdfMatrix};
use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::users::{Disutility, UserSet};

/// Tolerance used when classifying binding constraints and certifying
/// the dispatch invariants.
const DISPATCH_TOL: f64 = 1e-8;

/// Demand in MW per user; entries may be negative (net injection).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandProfile(pub Vec<f64>);

impl DemandProfile {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DemandProfile {
    fn from(v: Vec<f64>) -> Self {
        DemandProfile(v)
    }
}

/// A constraint active at the dispatch optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum BindingConstraint {
    LineUpper { line: usize },
    LineLower { line: usize },
    GenMin { gen: usize },
    GenMax { gen: usize },
}

/// Outcome of one dispatch evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct DispatchResult {
    /// Optimal system cost J in $/h (includes any value-of-lost-load cost).
    pub cost: f64,
    /// Optimal generation in MW, one entry per case generator.
    pub generation: Vec<f64>,
    /// Locational marginal price in $/MWh at each user, an element of the
    /// generalized gradient of the system cost.
    pub lmp: Vec<f64>,
    /// Constraints at their limits at the optimum.
    pub binding: Vec<BindingConstraint>,
}

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error("demand unservable (phase-1 infeasibility {infeasibility:.6e})")]
    Unservable { infeasibility: f64 },
    #[error("demand profile has {got} entries but the case has {expected} users")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ptdf shape does not match the case")]
    PtdfMismatch,
    #[error("internal dispatch failure: {0}")]
    Internal(String),
}

/// Evaluate the system cost J and one subgradient element at a demand profile.
///
/// With `voll` set, a fictitious generator with that cost and unlimited
/// capacity is placed at every bus, which keeps positive-total demand
/// servable at finite cost; the real generation vector is still reported
/// per case generator.
pub fn evaluate_cost(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    demand: &DemandProfile,
    voll: Option<f64>,
) -> Result<DispatchResult, DispatchError> {
    let n_users = case.users.len();
    if demand.len() != n_users {
        return Err(DispatchError::DimensionMismatch {
            expected: n_users,
            got: demand.len(),
        });
    }
    if ptdf.n_buses() != case.n_buses() || ptdf.n_lines() != case.lines.len() {
        return Err(DispatchError::PtdfMismatch);
    }
    if demand.0.iter().any(|x| !x.is_finite()) {
        return Err(DispatchError::Internal("non-finite demand entry".into()));
    }

    let mut lp = LpProblem::new();

    // one variable per generator, plus optional lost-load generators
    let gen_vars: Vec<usize> = case
        .generators
        .iter()
        .map(|g| lp.add_var(g.cost, 0.0, g.pmax.unwrap_or(f64::INFINITY)))
        .collect();
    let voll_vars: Vec<(usize, usize)> = match voll {
        Some(price) => (0..case.n_buses())
            .map(|bus| (bus, lp.add_var(price, 0.0, f64::INFINITY)))
            .collect(),
        None => Vec::new(),
    };

    // system balance: total generation equals total demand
    let total_demand: f64 = demand.0.iter().sum();
    let mut balance: Vec<(usize, f64)> = gen_vars.iter().map(|&v| (v, 1.0)).collect();
    balance.extend(voll_vars.iter().map(|&(_, v)| (v, 1.0)));
    lp.add_equality(&balance, total_demand);

    // one ranged row per limited line: ptdf . generation - flow slack equals
    // the fixed user-side flow, with the slack bounded by the thermal limit
    let mut line_rows: Vec<(usize, usize)> = Vec::new(); // (line, row index)
    for (l, line) in case.lines.iter().enumerate() {
        let Some(limit) = line.limit else { continue };
        let slack = lp.add_var(0.0, -limit, limit);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (g, &v) in case.generators.iter().zip(&gen_vars) {
            let w = ptdf.entry(l, g.bus);
            if w != 0.0 {
                row.push((v, w));
            }
        }
        for &(bus, v) in &voll_vars {
            let w = ptdf.entry(l, bus);
            if w != 0.0 {
                row.push((v, w));
            }
        }
        row.push((slack, -1.0));
        let rhs: f64 = case
            .users
            .iter()
            .zip(&demand.0)
            .map(|(u, &x)| ptdf.entry(l, u.bus) * x)
            .sum();
        lp.add_equality(&row, rhs);
        line_rows.push((l, lp.n_rows() - 1));
    }

    let solution = solve_lp(&lp).map_err(|e| DispatchError::Internal(e.to_string()))?;
    match solution.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(DispatchError::Unservable {
                infeasibility: solution.infeasibility.unwrap_or(f64::NAN),
            })
        }
        // generation costs are nonnegative by validation, so the dispatch
        // program is bounded below for any finite demand
        LpStatus::Unbounded => {
            return Err(DispatchError::Internal(
                "dispatch LP reported unbounded".into(),
            ))
        }
    }

    let duals = solution
        .dual_vector()
        .map_err(|e| DispatchError::Internal(e.to_string()))?;

    // lmp_i = balance dual + sum_l congestion dual * ptdf[l, bus_i]
    let lmp: Vec<f64> = case
        .users
        .iter()
        .map(|u| {
            duals[0]
                + line_rows
                    .iter()
                    .map(|&(l, row)| duals[row] * ptdf.entry(l, u.bus))
                    .sum::<f64>()
        })
        .collect();

    let generation: Vec<f64> = gen_vars.iter().map(|&v| solution.primal[v]).collect();

    // net injections and flows for the binding report and the invariants
    let mut injections = vec![0.0; case.n_buses()];
    for (g, &xi) in case.generators.iter().zip(&generation) {
        injections[g.bus] += xi;
    }
    for &(bus, v) in &voll_vars {
        injections[bus] += solution.primal[v];
    }
    for (u, &x) in case.users.iter().zip(&demand.0) {
        injections[u.bus] -= x;
    }
    let flows = ptdf.flows(&injections);

    let mut binding = Vec::new();
    for (l, line) in case.lines.iter().enumerate() {
        if let Some(limit) = line.limit {
            if (flows[l] - limit).abs() <= DISPATCH_TOL * (1.0 + limit) {
                binding.push(BindingConstraint::LineUpper { line: l });
            } else if (flows[l] + limit).abs() <= DISPATCH_TOL * (1.0 + limit) {
                binding.push(BindingConstraint::LineLower { line: l });
            }
        }
    }
    for (g, (gen, &xi)) in case.generators.iter().zip(&generation).enumerate() {
        if xi.abs() <= DISPATCH_TOL {
            binding.push(BindingConstraint::GenMin { gen: g });
        } else if let Some(pmax) = gen.pmax {
            if (pmax - xi).abs() <= DISPATCH_TOL * (1.0 + pmax) {
                binding.push(BindingConstraint::GenMax { gen: g });
            }
        }
    }

    let result = DispatchResult {
        cost: solution.objective,
        generation,
        lmp,
        binding,
    };
    certify(case, demand, voll, &result, &solution.primal, &voll_vars, &flows)?;
    Ok(result)
}

/// Re-check the dispatch invariants before handing the result out.
fn certify(
    case: &GridCase,
    demand: &DemandProfile,
    voll: Option<f64>,
    result: &DispatchResult,
    primal: &[f64],
    voll_vars: &[(usize, usize)],
    flows: &[f64],
) -> Result<(), DispatchError> {
    let scale = 1.0 + demand.0.iter().map(|x| x.abs()).sum::<f64>();
    for (g, (gen, &xi)) in case.generators.iter().zip(&result.generation).enumerate() {
        let pmax = gen.pmax.unwrap_or(f64::INFINITY);
        if xi < -DISPATCH_TOL * scale || xi > pmax + DISPATCH_TOL * (1.0 + pmax) {
            return Err(DispatchError::Internal(format!(
                "generator {g} violates its capacity: {xi}"
            )));
        }
    }
    let voll_total: f64 = voll_vars.iter().map(|&(_, v)| primal[v]).sum();
    let total_gen: f64 = result.generation.iter().sum::<f64>() + voll_total;
    let total_demand: f64 = demand.0.iter().sum();
    if (total_gen - total_demand).abs() > DISPATCH_TOL * scale {
        return Err(DispatchError::Internal(format!(
            "balance violated: generation {total_gen} vs demand {total_demand}"
        )));
    }
    for (l, line) in case.lines.iter().enumerate() {
        if let Some(limit) = line.limit {
            if flows[l].abs() > limit + DISPATCH_TOL * (1.0 + limit) {
                return Err(DispatchError::Internal(format!(
                    "flow on line {l} exceeds its limit: {}",
                    flows[l]
                )));
            }
        }
    }
    let direct_cost: f64 = case
        .generators
        .iter()
        .zip(&result.generation)
        .map(|(g, &xi)| g.cost * xi)
        .sum::<f64>()
        + voll.unwrap_or(0.0) * voll_total;
    if (direct_cost - result.cost).abs() > DISPATCH_TOL * (1.0 + result.cost.abs()) {
        return Err(DispatchError::Internal(format!(
            "objective mismatch: {direct_cost} vs {}",
            result.cost
        )));
    }
    Ok(())
}

/// Verify the subgradient inequality `J(y) >= J(x) + lmp(x) . (y - x) - 1e-6`.
pub fn subgradient_check(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    x: &DemandProfile,
    y: &DemandProfile,
    voll: Option<f64>,
) -> Result<bool, DispatchError> {
    let at_x = evaluate_cost(case, ptdf, x, voll)?;
    let at_y = evaluate_cost(case, ptdf, y, voll)?;
    let linear: f64 = at_x
        .lmp
        .iter()
        .zip(y.0.iter().zip(&x.0))
        .map(|(l, (yv, xv))| l * (yv - xv))
        .sum();
    Ok(at_y.cost >= at_x.cost + linear - 1e-6)
}

/// Total welfare cost `C(x) = sum_i f_i(x_i) + J(x)` for a servable profile.
pub fn welfare_cost<D: Disutility>(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    users: &UserSet<D>,
    demand: &DemandProfile,
    voll: Option<f64>,
) -> Result<f64, DispatchError> {
    let dispatch = evaluate_cost(case, ptdf, demand, voll)?;
    let disutility = users
        .total_disutility(demand)
        .map_err(|e| DispatchError::Internal(e.to_string()))?;
    Ok(disutility + dispatch.cost)
}
