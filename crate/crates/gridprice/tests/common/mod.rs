//! Shared helpers for the integration and acceptance suites: seeded
//! random problem generators and brute-force oracles that stay
//! independent of the solver paths they check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use gridprice::{Generator, GridCase, Line, UserParams};

pub fn case_path(name: &str) -> String {
    format!(
        "{}/../../cases/{name}.json",
        env!("CARGO_MANIFEST_DIR")
    )
}

/// A dense LP in the solver's native form, kept as raw arrays so the
/// oracle below shares no code with `gridprice::lp`.
#[derive(Debug, Clone)]
pub struct RawLp {
    pub n: usize,
    pub m: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl RawLp {
    pub fn to_problem(&self) -> gridprice::LpProblem {
        let mut p = gridprice::LpProblem::new();
        for j in 0..self.n {
            p.add_var(self.objective[j], self.lower[j], self.upper[j]);
        }
        for (row, &b) in self.rows.iter().zip(&self.rhs) {
            let coeffs: Vec<(usize, f64)> =
                row.iter().enumerate().map(|(j, &a)| (j, a)).collect();
            p.add_equality(&coeffs, b);
        }
        p
    }
}

/// Generate a feasible bounded LP: draw a box, pick an interior point,
/// and let the rows pass through it.
pub fn random_feasible_lp(rng: &mut impl Rng, max_vars: usize, max_rows: usize) -> RawLp {
    let n = rng.gen_range(2..=max_vars);
    let m = rng.gen_range(1..=max_rows.min(n));
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut x0 = Vec::with_capacity(n);
    for _ in 0..n {
        let lo: f64 = rng.gen_range(-5.0..0.0);
        let hi = lo + rng.gen_range(0.5..6.0);
        lower.push(lo);
        upper.push(hi);
        x0.push(lo + rng.gen_range(0.1..0.9) * (hi - lo));
    }
    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for _ in 0..m {
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: f64 = row.iter().zip(&x0).map(|(a, x)| a * x).sum();
        rows.push(row);
        rhs.push(b);
    }
    let objective = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    RawLp {
        n,
        m,
        objective,
        rows,
        rhs,
        lower,
        upper,
    }
}

/// Brute-force LP oracle: enumerate every basic solution (all column
/// subsets of size m, all bound assignments of the rest), keep the
/// feasible ones, and return the best objective. Exponential and proud
/// of it; only sane for tiny problems.
pub fn vertex_enumeration_min(lp: &RawLp) -> Option<f64> {
    let RawLp { n, m, .. } = *lp;
    assert!(m <= n, "oracle needs at least as many columns as rows");
    let mut best: Option<f64> = None;

    let mut subset: Vec<usize> = (0..m).collect();
    loop {
        enumerate_bound_assignments(lp, &subset, &mut best);
        // next lexicographic m-subset of 0..n
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] != i + n - m {
                subset[i] += 1;
                for j in i + 1..m {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn enumerate_bound_assignments(lp: &RawLp, basis: &[usize], best: &mut Option<f64>) {
    let m = lp.m;
    let nonbasic: Vec<usize> = (0..lp.n).filter(|j| !basis.contains(j)).collect();
    let b_mat = DMatrix::from_fn(m, m, |i, k| lp.rows[i][basis[k]]);
    let Some(lu) = try_lu(&b_mat) else { return };

    for mask in 0..(1u32 << nonbasic.len()) {
        let mut resid = DVector::from_column_slice(&lp.rhs);
        let mut x = vec![0.0; lp.n];
        for (bit, &j) in nonbasic.iter().enumerate() {
            let v = if mask & (1 << bit) == 0 {
                lp.lower[j]
            } else {
                lp.upper[j]
            };
            x[j] = v;
            for i in 0..m {
                resid[i] -= lp.rows[i][j] * v;
            }
        }
        let Some(xb) = lu.solve(&resid) else { continue };
        let mut feasible = true;
        for (k, &j) in basis.iter().enumerate() {
            x[j] = xb[k];
            if xb[k] < lp.lower[j] - 1e-9 || xb[k] > lp.upper[j] + 1e-9 {
                feasible = false;
                break;
            }
        }
        if !feasible {
            continue;
        }
        let obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        *best = Some(match *best {
            None => obj,
            Some(cur) => cur.min(obj),
        });
    }
}

fn try_lu(mat: &DMatrix<f64>) -> Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = mat.clone().lu();
    // reject numerically singular bases
    if lu.determinant().abs() < 1e-10 {
        None
    } else {
        Some(lu)
    }
}

/// A random connected case: spanning tree plus a few chords,
/// nonnegative costs, one user per bus.
pub fn random_connected_case(rng: &mut impl Rng) -> GridCase {
    let b = rng.gen_range(2..=12);
    let mut lines = Vec::new();
    for to in 1..b {
        let from = rng.gen_range(0..to);
        lines.push(Line {
            from,
            to,
            susceptance: rng.gen_range(0.5..20.0),
            limit: None,
        });
    }
    for _ in 0..(b / 2) {
        let from = rng.gen_range(0..b);
        let to = rng.gen_range(0..b);
        if from != to {
            lines.push(Line {
                from,
                to,
                susceptance: rng.gen_range(0.5..20.0),
                limit: None,
            });
        }
    }
    let n_gens = rng.gen_range(1..=3);
    let generators = (0..n_gens)
        .map(|_| Generator {
            bus: rng.gen_range(0..b),
            cost: rng.gen_range(0.0..20.0),
            pmax: if rng.gen_bool(0.3) {
                None
            } else {
                Some(rng.gen_range(5.0..50.0))
            },
        })
        .collect();
    let users = (0..b)
        .map(|bus| UserParams {
            bus,
            xbar: rng.gen_range(0.0..3.0),
            a: rng.gen_range(0.5..30.0),
        })
        .collect();
    GridCase {
        buses: (0..b).collect(),
        slack_bus: rng.gen_range(0..b),
        lines,
        generators,
        users,
    }
}
