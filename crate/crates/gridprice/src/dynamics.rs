//! Explicit Euler integration of the adaptive price dynamic.
//!
//! The operator's price update is the differential inclusion
//! `dp/dt ∈ ∂J(x*(p)) - p`: drift toward whatever locational marginal
//! prices the current user response induces. Discretized with a fixed
//! step, one iteration is
//!
//! ```text
//! x_k = best_response(p_k)        (users react instantly)
//! λ_k ∈ ∂J(x_k)                   (one subgradient element, from the LP dual)
//! p_{k+1} = p_k + α (λ_k - p_k)
//! ```
//!
//! The fixed-point residual `max_i |λ_i - p_i|` is exactly the magnitude
//! of the drift, so it doubles as the convergence metric. Along the way
//! the run records the welfare cost `C_k = Σ f_i(x_i) + J(x_k)`, whose
//! shifted values form the Lyapunov diagnostic `V_k`; at an equilibrium
//! `V = 0` and away from it the continuous-time theory guarantees
//! descent, which the recorded series lets tests verify empirically.
//!
//! At a kink of `J` the LP may alternate between subgradient elements and
//! the discrete iteration can chatter; a guard watches for long stretches
//! of non-decreasing `C` above tolerance and halves the step (at most six
//! times), mimicking the vanishing discretization error of the continuous
//! inclusion.

use serde::Serialize;
use std::io::{self, Write};

use crate::dispatch::{evaluate_cost, DemandProfile, DispatchError};
use crate::grid::{GridCase, PtdfMatrix};
use crate::users::{Disutility, UserSet};

/// Price in $/MWh per user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceProfile(pub Vec<f64>);

impl PriceProfile {
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

impl From<Vec<f64>> for PriceProfile {
    fn from(v: Vec<f64>) -> Self {
        PriceProfile(v)
    }
}

/// Parameters of one integration run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Euler step size α.
    pub step_size: f64,
    /// Maximum number of price updates before giving up.
    pub max_iters: usize,
    /// Convergence threshold on the fixed-point residual (infinity norm).
    pub residual_tol: f64,
    /// Seed carried for reproducibility; the integrator itself is
    /// deterministic, the seed governs the caller's initial-price draws.
    pub rng_seed: u64,
    /// Value of lost load; `None` makes unservable demand a hard error.
    pub voll: Option<f64>,
    /// Record every k-th step (the first and last are always recorded).
    pub record_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            step_size: 0.05,
            max_iters: 20_000,
            residual_tol: 1e-6,
            rng_seed: 0,
            voll: None,
            record_every: 1,
        }
    }
}

impl RunConfig {
    fn validate(&self) {
        assert!(self.step_size > 0.0, "step size must be positive");
        assert!(self.max_iters >= 1, "max_iters must be at least 1");
        assert!(self.residual_tol > 0.0, "residual tolerance must be positive");
        assert!(self.record_every >= 1, "record_every must be at least 1");
    }
}

/// Terminal classification of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RunStatus {
    Converged,
    MaxIters,
    Error,
}

/// State captured at one recorded step.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub prices: Vec<f64>,
    pub demand: Vec<f64>,
    pub lmp: Vec<f64>,
    /// System cost J($/h).
    pub cost: f64,
    /// Welfare cost C = total disutility + J.
    pub welfare_cost: f64,
    /// Fixed-point residual `max_i |lmp_i - p_i|`.
    pub residual: f64,
}

/// Time-indexed record of a run, for diagnostics and CSV export.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub status: RunStatus,
    /// Number of Euler updates applied.
    pub steps: usize,
    /// Number of dispatch evaluations performed.
    pub evaluations: usize,
    /// Step size in effect at the end (smaller than the configured α if
    /// the chattering guard fired).
    pub final_step_size: f64,
    pub error: Option<String>,
}

impl Trajectory {
    /// The last recorded step; panics on an empty trajectory.
    pub fn terminal(&self) -> &StepRecord {
        self.records.last().expect("trajectory has no records")
    }

    /// The Lyapunov series `V_k`.
    ///
    /// On a converged run the reference level is the terminal welfare
    /// cost, making `V` terminate at exactly zero; otherwise the best
    /// cost seen so far anchors the series.
    pub fn lyapunov_series(&self) -> Vec<f64> {
        if self.records.is_empty() {
            return Vec::new();
        }
        let reference = match self.status {
            RunStatus::Converged => self.terminal().welfare_cost,
            _ => self
                .records
                .iter()
                .map(|r| r.welfare_cost)
                .fold(f64::INFINITY, f64::min),
        };
        self.records
            .iter()
            .map(|r| r.welfare_cost - reference)
            .collect()
    }

    /// Write the run as CSV with columns
    /// `k, p_0..p_{n-1}, x_0..x_{n-1}, J, C, V, residual`.
    ///
    /// Floats print in shortest round-trip form, so identical runs
    /// produce identical bytes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.records.first().map_or(0, |r| r.prices.len());
        let mut header = String::from("k");
        for i in 0..n {
            header.push_str(&format!(",p_{i}"));
        }
        for i in 0..n {
            header.push_str(&format!(",x_{i}"));
        }
        header.push_str(",J,C,V,residual");
        writeln!(w, "{header}")?;

        let v = self.lyapunov_series();
        for (rec, vk) in self.records.iter().zip(v) {
            let mut row = format!("{}", rec.k);
            for p in &rec.prices {
                row.push_str(&format!(",{p}"));
            }
            for x in &rec.demand {
                row.push_str(&format!(",{x}"));
            }
            row.push_str(&format!(
                ",{},{},{},{}",
                rec.cost, rec.welfare_cost, vk, rec.residual
            ));
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

/// One Euler step: evaluate the response and dispatch at `p`, then move
/// the prices toward the observed LMPs. Returns the next price profile
/// and the step record (with `k` left at zero for the caller to fill).
pub fn step<D: Disutility>(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    users: &UserSet<D>,
    prices: &PriceProfile,
    step_size: f64,
    voll: Option<f64>,
) -> Result<(PriceProfile, StepRecord), DispatchError> {
    let record = observe(case, ptdf, users, prices, voll)?;
    let next = PriceProfile(
        prices
            .0
            .iter()
            .zip(&record.lmp)
            .map(|(p, l)| p + step_size * (l - p))
            .collect(),
    );
    Ok((next, record))
}

/// Evaluate users and dispatch at a price profile without stepping.
fn observe<D: Disutility>(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    users: &UserSet<D>,
    prices: &PriceProfile,
    voll: Option<f64>,
) -> Result<StepRecord, DispatchError> {
    let demand: DemandProfile = users
        .best_response_profile(prices)
        .map_err(|e| DispatchError::Internal(e.to_string()))?;
    let dispatch = evaluate_cost(case, ptdf, &demand, voll)?;
    let disutility = users
        .total_disutility(&demand)
        .map_err(|e| DispatchError::Internal(e.to_string()))?;
    let residual = dispatch
        .lmp
        .iter()
        .zip(&prices.0)
        .map(|(l, p)| (l - p).abs())
        .fold(0.0f64, f64::max);
    Ok(StepRecord {
        k: 0,
        prices: prices.0.clone(),
        demand: demand.0.clone(),
        lmp: dispatch.lmp,
        cost: dispatch.cost,
        welfare_cost: disutility + dispatch.cost,
        residual,
    })
}

/// How many consecutive stalled steps trigger a step-size halving.
const CHATTER_WINDOW: usize = 500;
/// Maximum number of halvings before the guard gives up.
const MAX_HALVINGS: usize = 6;

/// Integrate the price dynamic from `p0` until the fixed-point residual
/// drops below tolerance or the iteration budget runs out.
///
/// Unservable demand with `voll` disabled ends the run with
/// [`RunStatus::Error`], keeping every record gathered so far.
pub fn run<D: Disutility>(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    users: &UserSet<D>,
    p0: &PriceProfile,
    cfg: &RunConfig,
) -> Trajectory {
    cfg.validate();
    assert!(
        p0.0.iter().all(|p| p.is_finite()),
        "initial prices must be finite"
    );

    let mut prices = p0.clone();
    let mut alpha = cfg.step_size;
    let mut records: Vec<StepRecord> = Vec::new();
    let mut steps = 0usize;
    let mut evaluations = 0usize;
    let mut best_welfare = f64::INFINITY;
    let mut since_progress = 0usize;
    let mut halvings = 0usize;

    loop {
        let mut rec = match observe(case, ptdf, users, &prices, cfg.voll) {
            Ok(rec) => rec,
            Err(e) => {
                return Trajectory {
                    records,
                    status: RunStatus::Error,
                    steps,
                    evaluations,
                    final_step_size: alpha,
                    error: Some(e.to_string()),
                };
            }
        };
        let k = evaluations;
        evaluations += 1;
        rec.k = k;

        let due = k % cfg.record_every == 0;
        let converged = rec.residual <= cfg.residual_tol;
        let exhausted = steps >= cfg.max_iters;
        if due || converged || exhausted {
            records.push(rec.clone());
        }
        if converged || exhausted {
            return Trajectory {
                records,
                status: if converged {
                    RunStatus::Converged
                } else {
                    RunStatus::MaxIters
                },
                steps,
                evaluations,
                final_step_size: alpha,
                error: None,
            };
        }

        // chattering guard: 500 steps above tolerance without a new
        // welfare low means the discrete selection is bouncing between
        // subgradient elements; a smaller step shrinks the bounce
        if rec.welfare_cost < best_welfare - 1e-12 {
            best_welfare = rec.welfare_cost;
            since_progress = 0;
        } else {
            since_progress += 1;
        }
        if since_progress >= CHATTER_WINDOW && halvings < MAX_HALVINGS {
            alpha *= 0.5;
            halvings += 1;
            since_progress = 0;
        }

        prices = PriceProfile(
            prices
                .0
                .iter()
                .zip(&rec.lmp)
                .map(|(p, l)| p + alpha * (l - p))
                .collect(),
        );
        steps += 1;
    }
}

/// Free-function form of [`Trajectory::lyapunov_series`].
pub fn lyapunov_series(trajectory: &Trajectory) -> Vec<f64> {
    trajectory.lyapunov_series()
}
