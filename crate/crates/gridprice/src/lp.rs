//! Bounded-variable linear programming with certified primal/dual pairs.
//!
//! The solver is a dense two-phase primal simplex over variables with
//! individual lower/upper bounds (either side may be infinite). Inequality
//! constraints are folded into equality rows by slack variables, so the
//! dual vector has one multiplier per row and equals the sensitivity of
//! the optimal value to that row's right-hand side, which is exactly the
//! quantity the dispatch layer turns into locational marginal prices.
//!
//! Pricing starts with the Dantzig rule and falls back to Bland's rule
//! after a fixed iteration budget, which guarantees termination on the
//! degenerate bases that congested dispatch problems routinely produce.
//! The basis is refactorized from scratch every iteration (desk-scale
//! problems, stability over speed) and every `Optimal` return is verified
//! against feasibility, dual feasibility, complementary slackness and
//! strong duality before it reaches the caller.

use nalgebra::{DMatrix, DVector};

/// Internal feasibility/pricing tolerance.
const TOL: f64 = 1e-9;
/// Tolerance below which a ratio-test pivot entry is treated as zero.
const PIVOT_TOL: f64 = 1e-10;
/// Certified tolerance promised on returned solutions.
const CERT_TOL: f64 = 1e-8;

/// Errors from problem construction and solving.
#[derive(Debug, thiserror::Error)]
pub enum LpError {
    #[error("malformed problem: {0}")]
    BadProblem(String),
    #[error("cycling safeguard exceeded")]
    Internal,
    #[error("singular basis encountered")]
    SingularBasis,
    #[error("solution failed certification: {0}")]
    Certification(String),
    #[error("dual vector requested on a non-optimal solution")]
    NotOptimal,
}

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// A linear program `min c'x  s.t.  A x = b,  l <= x <= u`.
///
/// Build variables first with [`add_var`](Self::add_var), then add rows.
/// The `add_le`/`add_ge` helpers create their own slack variable, keeping
/// every stored row an equality.
#[derive(Debug, Clone)]
pub struct LpProblem {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl LpProblem {
    pub fn new() -> Self {
        LpProblem {
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            rows: Vec::new(),
            rhs: Vec::new(),
        }
    }

    /// Add a variable with objective coefficient and bounds; returns its index.
    /// Use `f64::NEG_INFINITY` / `f64::INFINITY` for one-sided or free variables.
    pub fn add_var(&mut self, objective: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(objective);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    /// Add the equality row `sum coeffs . x = rhs`.
    pub fn add_equality(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        self.rows.push(coeffs.to_vec());
        self.rhs.push(rhs);
    }

    /// Add `sum coeffs . x <= ub` via a nonnegative slack.
    pub fn add_le(&mut self, coeffs: &[(usize, f64)], ub: f64) {
        let s = self.add_var(0.0, 0.0, f64::INFINITY);
        let mut row = coeffs.to_vec();
        row.push((s, 1.0));
        self.add_equality(&row, ub);
    }

    /// Add `sum coeffs . x >= lb` via a nonnegative surplus.
    pub fn add_ge(&mut self, coeffs: &[(usize, f64)], lb: f64) {
        let s = self.add_var(0.0, 0.0, f64::INFINITY);
        let mut row = coeffs.to_vec();
        row.push((s, -1.0));
        self.add_equality(&row, lb);
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn objective_coeffs(&self) -> &[f64] {
        &self.objective
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    fn validate(&self) -> Result<(), LpError> {
        for (j, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo > hi {
                return Err(LpError::BadProblem(format!(
                    "variable {j} has lower bound {lo} above upper bound {hi}"
                )));
            }
            if lo.is_nan() || hi.is_nan() {
                return Err(LpError::BadProblem(format!("variable {j} has NaN bound")));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::BadProblem("non-finite objective".into()));
        }
        if self.rhs.iter().any(|b| !b.is_finite()) {
            return Err(LpError::BadProblem("non-finite right-hand side".into()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                if j >= self.n_vars() {
                    return Err(LpError::BadProblem(format!(
                        "row {i} references unknown variable {j}"
                    )));
                }
                if !a.is_finite() {
                    return Err(LpError::BadProblem(format!("non-finite entry in row {i}")));
                }
            }
        }
        Ok(())
    }
}

impl Default for LpProblem {
    fn default() -> Self {
        Self::new()
    }
}

/// Certified solution of an [`LpProblem`].
///
/// `duals` holds one multiplier per row: the optimal dual vector when
/// `Optimal`, a Farkas-type phase-1 multiplier vector when `Infeasible`.
/// `ray` is an unbounded improving direction when `Unbounded`, and
/// `infeasibility` is the positive phase-1 optimum when `Infeasible`.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub ray: Option<Vec<f64>>,
    pub infeasibility: Option<f64>,
}

impl LpSolution {
    /// The row-indexed multiplier vector; usage error unless `Optimal`.
    pub fn dual_vector(&self) -> Result<&[f64], LpError> {
        match self.status {
            LpStatus::Optimal => Ok(&self.duals),
            _ => Err(LpError::NotOptimal),
        }
    }

    /// Lagrangian dual objective `y'b + sum_j d_j x_j`, which matches the
    /// primal objective at a certified optimum.
    pub fn dual_objective(&self, problem: &LpProblem) -> f64 {
        let yb: f64 = self
            .duals
            .iter()
            .zip(problem.rhs())
            .map(|(y, b)| y * b)
            .sum();
        let dx: f64 = self
            .reduced_costs
            .iter()
            .zip(&self.primal)
            .map(|(d, x)| d * x)
            .sum();
        yb + dx
    }

    /// Re-check every optimality certificate; `Err` describes the first failure.
    pub fn verify(&self, problem: &LpProblem) -> Result<(), String> {
        if self.status != LpStatus::Optimal {
            return Ok(());
        }
        let x = &self.primal;
        for (i, row) in problem.rows.iter().enumerate() {
            let lhs: f64 = row.iter().map(|&(j, a)| a * x[j]).sum();
            let resid = (lhs - problem.rhs[i]).abs();
            if resid > CERT_TOL * (1.0 + problem.rhs[i].abs()) {
                return Err(format!("primal residual {resid:.3e} on row {i}"));
            }
        }
        for (j, &xj) in x.iter().enumerate() {
            let (lo, hi) = (problem.lower[j], problem.upper[j]);
            if xj < lo - CERT_TOL || xj > hi + CERT_TOL {
                return Err(format!("variable {j} = {xj} violates bounds [{lo}, {hi}]"));
            }
        }
        for (j, &d) in self.reduced_costs.iter().enumerate() {
            let (lo, hi) = (problem.lower[j], problem.upper[j]);
            let at_lo = (x[j] - lo).abs() <= CERT_TOL * (1.0 + lo.abs());
            let at_hi = (hi - x[j]).abs() <= CERT_TOL * (1.0 + hi.abs());
            let ok = d.abs() <= CERT_TOL || (at_lo && d >= -CERT_TOL) || (at_hi && d <= CERT_TOL);
            if !ok {
                return Err(format!(
                    "dual infeasibility on variable {j}: d = {d:.3e}, x = {}",
                    x[j]
                ));
            }
        }
        let gap = (self.objective - self.dual_objective(problem)).abs();
        if gap > CERT_TOL * (1.0 + self.objective.abs()) {
            return Err(format!("duality gap {gap:.3e}"));
        }
        Ok(())
    }
}

/// Free-function form of [`LpSolution::dual_vector`].
pub fn dual_vector(solution: &LpSolution) -> Result<&[f64], LpError> {
    solution.dual_vector()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    FreeAtZero,
}

enum LoopExit {
    Optimal,
    Unbounded { entering: usize, increase: bool },
}

struct Simplex {
    // columns for structural variables followed by one artificial per row
    a: DMatrix<f64>,
    b: DVector<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_real: usize,
    m: usize,
    state: Vec<VarState>,
    basis: Vec<usize>,
    x: Vec<f64>,
    duals: DVector<f64>,
    iterations: usize,
}

impl Simplex {
    fn new(p: &LpProblem) -> Simplex {
        let m = p.n_rows();
        let n_real = p.n_vars();
        let n_total = n_real + m;

        let mut a = DMatrix::zeros(m, n_total);
        for (i, row) in p.rows.iter().enumerate() {
            for &(j, coeff) in row {
                a[(i, j)] += coeff;
            }
        }

        let mut lower = p.lower.clone();
        let mut upper = p.upper.clone();
        let mut state = Vec::with_capacity(n_total);
        let mut x = Vec::with_capacity(n_total);

        // structural variables start on a finite bound (lower preferred)
        for j in 0..n_real {
            if p.lower[j].is_finite() {
                state.push(VarState::AtLower);
                x.push(p.lower[j]);
            } else if p.upper[j].is_finite() {
                state.push(VarState::AtUpper);
                x.push(p.upper[j]);
            } else {
                state.push(VarState::FreeAtZero);
                x.push(0.0);
            }
        }

        // artificials absorb the initial residual with positive values
        let b = DVector::from_column_slice(&p.rhs);
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let resid: f64 = b[i]
                - (0..n_real)
                    .map(|j| a[(i, j)] * x[j])
                    .sum::<f64>();
            let col = n_real + i;
            a[(i, col)] = if resid >= 0.0 { 1.0 } else { -1.0 };
            lower.push(0.0);
            upper.push(f64::INFINITY);
            state.push(VarState::Basic(i));
            x.push(resid.abs());
            basis.push(col);
        }

        Simplex {
            a,
            b,
            lower,
            upper,
            n_real,
            m,
            state,
            basis,
            x,
            duals: DVector::zeros(m),
            iterations: 0,
        }
    }

    fn column(&self, j: usize) -> DVector<f64> {
        DVector::from_iterator(self.m, (0..self.m).map(|i| self.a[(i, j)]))
    }

    /// Run the simplex loop for the given costs until optimal or unbounded.
    fn run(&mut self, costs: &[f64]) -> Result<LoopExit, LpError> {
        let n_total = self.n_real + self.m;
        let bland_after = 200 + 10 * (self.m + n_total);
        let hard_cap = 2_000 + 200 * (self.m + n_total);

        loop {
            self.iterations += 1;
            if self.iterations > hard_cap {
                return Err(LpError::Internal);
            }
            let bland = self.iterations > bland_after;

            // fresh factorizations of the basis and its transpose
            let basis_mat = DMatrix::from_fn(self.m, self.m, |i, r| self.a[(i, self.basis[r])]);
            let lu = basis_mat.clone().lu();
            let lu_t = basis_mat.transpose().lu();

            // recompute basic values from scratch to stop drift
            let mut resid = self.b.clone();
            for j in 0..n_total {
                if !matches!(self.state[j], VarState::Basic(_)) && self.x[j] != 0.0 {
                    for i in 0..self.m {
                        resid[i] -= self.a[(i, j)] * self.x[j];
                    }
                }
            }
            let xb = lu.solve(&resid).ok_or(LpError::SingularBasis)?;
            for (r, &var) in self.basis.iter().enumerate() {
                self.x[var] = xb[r];
            }

            let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&v| costs[v]));
            let y = lu_t.solve(&cb).ok_or(LpError::SingularBasis)?;
            self.duals = y.clone();

            // pricing
            let mut entering: Option<(usize, bool, f64)> = None; // (var, increase, |d|)
            for j in 0..n_total {
                if matches!(self.state[j], VarState::Basic(_)) || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = costs[j]
                    - (0..self.m)
                        .map(|i| y[i] * self.a[(i, j)])
                        .sum::<f64>();
                let candidate = match self.state[j] {
                    VarState::AtLower if d < -TOL => Some((j, true, d.abs())),
                    VarState::AtUpper if d > TOL => Some((j, false, d.abs())),
                    VarState::FreeAtZero if d.abs() > TOL => Some((j, d < 0.0, d.abs())),
                    _ => None,
                };
                if let Some(c) = candidate {
                    entering = match entering {
                        None => Some(c),
                        Some(best) => {
                            let better = if bland {
                                c.0 < best.0
                            } else {
                                c.2 > best.2 + 1e-12 || (c.2 > best.2 - 1e-12 && c.0 < best.0)
                            };
                            Some(if better { c } else { best })
                        }
                    };
                    if bland {
                        break; // Bland takes the first eligible index
                    }
                }
            }

            let Some((e, increase, _)) = entering else {
                return Ok(LoopExit::Optimal);
            };
            let sigma = if increase { 1.0 } else { -1.0 };

            let w = lu.solve(&self.column(e)).ok_or(LpError::SingularBasis)?;

            // ratio test: blocking basic variables plus the entering
            // variable's own opposite bound
            let own_range = self.upper[e] - self.lower[e]; // may be inf
            let mut best_t = if own_range.is_finite() {
                own_range
            } else {
                f64::INFINITY
            };
            let mut leaving: Option<(usize, bool, f64)> = None; // (row, to_upper, |pivot|)

            for r in 0..self.m {
                let wr = w[r];
                if wr.abs() <= PIVOT_TOL {
                    continue;
                }
                let var = self.basis[r];
                let delta = -sigma * wr; // change of x[var] per unit step
                let (bound, to_upper) = if delta > 0.0 {
                    (self.upper[var], true)
                } else {
                    (self.lower[var], false)
                };
                if !bound.is_finite() {
                    continue;
                }
                let t = (bound - self.x[var]) / delta;
                let t = t.max(0.0);
                let replace = match leaving {
                    _ if t < best_t - 1e-12 => true,
                    None => t < best_t + 1e-12,
                    Some((prev_r, _, prev_piv)) => {
                        t < best_t + 1e-12
                            && if bland {
                                self.basis[r] < self.basis[prev_r]
                            } else {
                                wr.abs() > prev_piv + 1e-12
                                    || (wr.abs() > prev_piv - 1e-12
                                        && self.basis[r] < self.basis[prev_r])
                            }
                    }
                };
                if replace {
                    best_t = best_t.min(t);
                    leaving = Some((r, to_upper, wr.abs()));
                }
            }

            if !best_t.is_finite() {
                return Ok(LoopExit::Unbounded {
                    entering: e,
                    increase,
                });
            }

            // apply the step
            let t = best_t.max(0.0);
            self.x[e] += sigma * t;
            for r in 0..self.m {
                let var = self.basis[r];
                self.x[var] -= sigma * t * w[r];
            }

            match leaving {
                None => {
                    // bound flip: entering moved across its own range
                    self.state[e] = if increase {
                        self.x[e] = self.upper[e];
                        VarState::AtUpper
                    } else {
                        self.x[e] = self.lower[e];
                        VarState::AtLower
                    };
                }
                Some((r, to_upper, _)) => {
                    let out = self.basis[r];
                    self.state[out] = if to_upper {
                        self.x[out] = self.upper[out];
                        VarState::AtUpper
                    } else {
                        self.x[out] = self.lower[out];
                        VarState::AtLower
                    };
                    self.basis[r] = e;
                    self.state[e] = VarState::Basic(r);
                }
            }
        }
    }

    /// Pivot remaining basic artificials onto structural columns where
    /// possible and pin every artificial to zero.
    fn retire_artificials(&mut self) -> Result<(), LpError> {
        for r in 0..self.m {
            if self.basis[r] < self.n_real {
                continue;
            }
            let basis_mat = DMatrix::from_fn(self.m, self.m, |i, c| self.a[(i, self.basis[c])]);
            let lu_t = basis_mat.transpose().lu();
            let mut unit = DVector::zeros(self.m);
            unit[r] = 1.0;
            let z = lu_t.solve(&unit).ok_or(LpError::SingularBasis)?;
            let candidate = (0..self.n_real)
                .filter(|&j| !matches!(self.state[j], VarState::Basic(_)))
                .find(|&j| {
                    (0..self.m)
                        .map(|i| z[i] * self.a[(i, j)])
                        .sum::<f64>()
                        .abs()
                        > 1e-7
                });
            if let Some(j) = candidate {
                // degenerate pivot: swap at zero step length
                let out = self.basis[r];
                self.state[out] = VarState::AtLower;
                self.x[out] = 0.0;
                self.basis[r] = j;
                self.state[j] = VarState::Basic(r);
            }
            // a redundant row keeps its artificial basic at value zero
        }
        for j in self.n_real..self.n_real + self.m {
            self.lower[j] = 0.0;
            self.upper[j] = 0.0;
            if !matches!(self.state[j], VarState::Basic(_)) {
                self.x[j] = 0.0;
                self.state[j] = VarState::AtLower;
            }
        }
        Ok(())
    }

    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        (0..self.n_real)
            .map(|j| {
                costs[j]
                    - (0..self.m)
                        .map(|i| self.duals[i] * self.a[(i, j)])
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Solve a bounded-variable linear program.
///
/// Returns `Err` only for malformed input or internal failures; the
/// infeasible/unbounded outcomes are ordinary [`LpStatus`] values carrying
/// their certificates.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.validate()?;

    if problem.n_rows() == 0 {
        return solve_box_only(problem);
    }

    let mut simplex = Simplex::new(problem);
    let n_total = problem.n_vars() + problem.n_rows();

    // phase 1: drive the artificials to zero
    let mut phase1_costs = vec![0.0; n_total];
    for c in phase1_costs.iter_mut().skip(problem.n_vars()) {
        *c = 1.0;
    }
    match simplex.run(&phase1_costs)? {
        LoopExit::Unbounded { .. } => return Err(LpError::Internal), // phase 1 is bounded below
        LoopExit::Optimal => {}
    }
    let infeas: f64 = (problem.n_vars()..n_total).map(|j| simplex.x[j]).sum();
    let b_scale = 1.0 + problem.rhs.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    if infeas > TOL * b_scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            primal: simplex.x[..problem.n_vars()].to_vec(),
            duals: simplex.duals.iter().copied().collect(),
            reduced_costs: Vec::new(),
            objective: f64::INFINITY,
            ray: None,
            infeasibility: Some(infeas),
        });
    }
    simplex.retire_artificials()?;

    // phase 2: the real objective
    let mut phase2_costs = vec![0.0; n_total];
    phase2_costs[..problem.n_vars()].copy_from_slice(&problem.objective);
    let exit = simplex.run(&phase2_costs)?;

    match exit {
        LoopExit::Optimal => {
            let primal = simplex.x[..problem.n_vars()].to_vec();
            let objective: f64 = problem
                .objective
                .iter()
                .zip(&primal)
                .map(|(c, x)| c * x)
                .sum();
            let solution = LpSolution {
                status: LpStatus::Optimal,
                primal,
                duals: simplex.duals.iter().copied().collect(),
                reduced_costs: simplex.reduced_costs(&phase2_costs),
                objective,
                ray: None,
                infeasibility: None,
            };
            solution
                .verify(problem)
                .map_err(LpError::Certification)?;
            Ok(solution)
        }
        LoopExit::Unbounded { entering, increase } => {
            let sigma = if increase { 1.0 } else { -1.0 };
            let basis_mat =
                DMatrix::from_fn(simplex.m, simplex.m, |i, r| simplex.a[(i, simplex.basis[r])]);
            let w = basis_mat
                .lu()
                .solve(&simplex.column(entering))
                .ok_or(LpError::SingularBasis)?;
            let mut ray = vec![0.0; problem.n_vars()];
            if entering < problem.n_vars() {
                ray[entering] = sigma;
            }
            for (r, &var) in simplex.basis.iter().enumerate() {
                if var < problem.n_vars() {
                    ray[var] = -sigma * w[r];
                }
            }
            Ok(LpSolution {
                status: LpStatus::Unbounded,
                primal: simplex.x[..problem.n_vars()].to_vec(),
                duals: Vec::new(),
                reduced_costs: Vec::new(),
                objective: f64::NEG_INFINITY,
                ray: Some(ray),
                infeasibility: None,
            })
        }
    }
}

/// Minimize over bounds alone when there are no rows.
fn solve_box_only(problem: &LpProblem) -> Result<LpSolution, LpError> {
    let n = problem.n_vars();
    let mut x = vec![0.0; n];
    for j in 0..n {
        let c = problem.objective[j];
        let (lo, hi) = (problem.lower[j], problem.upper[j]);
        if c > 0.0 {
            if !lo.is_finite() {
                let mut ray = vec![0.0; n];
                ray[j] = -1.0;
                return Ok(unbounded_solution(x, ray));
            }
            x[j] = lo;
        } else if c < 0.0 {
            if !hi.is_finite() {
                let mut ray = vec![0.0; n];
                ray[j] = 1.0;
                return Ok(unbounded_solution(x, ray));
            }
            x[j] = hi;
        } else {
            x[j] = if lo.is_finite() {
                lo
            } else if hi.is_finite() {
                hi
            } else {
                0.0
            };
        }
    }
    let objective = problem
        .objective
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        primal: x,
        duals: Vec::new(),
        reduced_costs: problem.objective.clone(),
        objective,
        ray: None,
        infeasibility: None,
    })
}

fn unbounded_solution(primal: Vec<f64>, ray: Vec<f64>) -> LpSolution {
    LpSolution {
        status: LpStatus::Unbounded,
        primal,
        duals: Vec::new(),
        reduced_costs: Vec::new(),
        objective: f64::NEG_INFINITY,
        ray: Some(ray),
        infeasibility: None,
    }
}
