//! Network case model and PTDF construction.
//!
//! A [`GridCase`] describes the static network: buses, lines with
//! susceptances and thermal limits, generators with linear costs, and one
//! or more price-responsive users per bus. [`build_ptdf`] linearizes the
//! lossless DC power flow around a single slack bus, producing the dense
//! sensitivity matrix that maps net nodal injections to line flows. With
//! the PTDF in hand, economic dispatch becomes a pure linear program in
//! the generation variables.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// A transmission line between two buses.
///
/// `limit` is the thermal limit in MW applied symmetrically to both flow
/// directions; `None` means the line is unbounded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Per-unit series susceptance, must be positive.
    pub susceptance: f64,
    /// Absent and `null` both mean unbounded.
    #[serde(default)]
    pub limit: Option<f64>,
}

/// A generator with a linear cost curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// Marginal cost in $/MWh.
    pub cost: f64,
    /// Capacity in MW; absent and `null` both mean unbounded.
    #[serde(default)]
    pub pmax: Option<f64>,
}

/// Parameters of one user's quadratic disutility `a (x - xbar)^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserParams {
    pub bus: usize,
    /// Target consumption in MW.
    pub xbar: f64,
    /// Curvature in $/MW^2 h, must be positive.
    pub a: f64,
}

/// Static description of a network case.
///
/// The JSON on-disk form uses exactly these field names; see the bundled
/// files under `cases/`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCase {
    /// Bus ids, required to be exactly `0..B-1` in order.
    pub buses: Vec<usize>,
    pub slack_bus: usize,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub users: Vec<UserParams>,
}

/// A case file whose generator costs may still be unset.
///
/// Used by the `gen` command: a topology template carries `cost: null`
/// entries that are filled with randomly drawn coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseTemplate {
    pub buses: Vec<usize>,
    pub slack_bus: usize,
    pub lines: Vec<Line>,
    pub generators: Vec<TemplateGenerator>,
    pub users: Vec<UserParams>,
}

/// Generator entry of a [`CaseTemplate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateGenerator {
    pub bus: usize,
    pub cost: Option<f64>,
    pub pmax: Option<f64>,
}

impl CaseTemplate {
    /// Fill the missing cost coefficients in order, returning a full case.
    /// `costs` must supply one value per generator with `cost: null`.
    pub fn instantiate(&self, costs: &[f64]) -> Result<GridCase, GridError> {
        let missing = self.generators.iter().filter(|g| g.cost.is_none()).count();
        if costs.len() != missing {
            return Err(GridError::Template(format!(
                "template has {missing} unset costs but {} were supplied",
                costs.len()
            )));
        }
        let mut drawn = costs.iter();
        let generators = self
            .generators
            .iter()
            .map(|g| Generator {
                bus: g.bus,
                cost: g.cost.unwrap_or_else(|| *drawn.next().unwrap()),
                pmax: g.pmax,
            })
            .collect();
        Ok(GridCase {
            buses: self.buses.clone(),
            slack_bus: self.slack_bus,
            lines: self.lines.clone(),
            generators,
            users: self.users.clone(),
        })
    }

    /// Number of generators whose cost is unset.
    pub fn unset_costs(&self) -> usize {
        self.generators.iter().filter(|g| g.cost.is_none()).count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| GridError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| GridError::Parse {
            path: path.as_ref().display().to_string(),
            source: e,
        })
    }
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| GridError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| GridError::Parse {
            path: path.as_ref().display().to_string(),
            source: e,
        })
    }

    /// Serialize to pretty JSON with a trailing newline. Field order is
    /// fixed by the struct definitions, so identical cases produce
    /// identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("case serialization cannot fail");
        s.push('\n');
        s
    }
}

/// A single rule violation found by [`validate_case`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    NoBuses,
    BusIdsNotCanonical,
    BadSlackBus { slack: usize },
    BadLineEndpoint { line: usize },
    SelfLoop { line: usize },
    NonpositiveSusceptance { line: usize },
    BadLineLimit { line: usize },
    BadGeneratorBus { generator: usize },
    NonfiniteCost { generator: usize },
    NegativeCost { generator: usize },
    BadPmax { generator: usize },
    BadUserBus { user: usize },
    BadUserParams { user: usize },
    NoUsers,
    Disconnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoBuses => write!(f, "case has no buses"),
            Violation::BusIdsNotCanonical => write!(f, "bus ids are not exactly 0..B-1"),
            Violation::BadSlackBus { slack } => write!(f, "slack bus {slack} is not a valid bus"),
            Violation::BadLineEndpoint { line } => {
                write!(f, "line {line} references an invalid bus")
            }
            Violation::SelfLoop { line } => write!(f, "line {line} connects a bus to itself"),
            Violation::NonpositiveSusceptance { line } => {
                write!(f, "nonpositive susceptance on line {line}")
            }
            Violation::BadLineLimit { line } => {
                write!(f, "negative or non-finite flow limit on line {line}")
            }
            Violation::BadGeneratorBus { generator } => {
                write!(f, "generator {generator} sits on an invalid bus")
            }
            Violation::NonfiniteCost { generator } => {
                write!(f, "non-finite cost on generator {generator}")
            }
            Violation::NegativeCost { generator } => {
                write!(f, "negative cost on generator {generator}")
            }
            Violation::BadPmax { generator } => {
                write!(f, "negative or NaN capacity on generator {generator}")
            }
            Violation::BadUserBus { user } => write!(f, "user {user} sits on an invalid bus"),
            Violation::BadUserParams { user } => {
                write!(f, "user {user} has non-finite xbar or nonpositive a")
            }
            Violation::NoUsers => write!(f, "case has no users"),
            Violation::Disconnected => write!(f, "disconnected network"),
        }
    }
}

/// Outcome of [`validate_case`]: empty means the case is usable.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "ok")
        } else {
            for (i, v) in self.violations.iter().enumerate() {
                if i > 0 {
                    writeln!(f)?;
                }
                write!(f, "{v}")?;
            }
            Ok(())
        }
    }
}

/// Errors from case loading and PTDF construction.
#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse case file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("case validation failed: {0}")]
    Invalid(ValidationReport),
    #[error("ill-conditioned network")]
    IllConditioned,
    #[error("bad template: {0}")]
    Template(String),
}

/// Check every structural invariant of a case.
///
/// Always returns a report rather than failing; callers decide whether a
/// non-empty report is fatal.
pub fn validate_case(case: &GridCase) -> ValidationReport {
    let mut violations = Vec::new();
    let b = case.buses.len();

    if b == 0 {
        violations.push(Violation::NoBuses);
    }
    if case.buses.iter().enumerate().any(|(i, &id)| i != id) {
        violations.push(Violation::BusIdsNotCanonical);
    }
    if case.slack_bus >= b {
        violations.push(Violation::BadSlackBus {
            slack: case.slack_bus,
        });
    }

    for (l, line) in case.lines.iter().enumerate() {
        if line.from >= b || line.to >= b {
            violations.push(Violation::BadLineEndpoint { line: l });
        } else if line.from == line.to {
            violations.push(Violation::SelfLoop { line: l });
        }
        if !(line.susceptance > 0.0 && line.susceptance.is_finite()) {
            violations.push(Violation::NonpositiveSusceptance { line: l });
        }
        if let Some(lim) = line.limit {
            if !(lim >= 0.0) || !lim.is_finite() {
                violations.push(Violation::BadLineLimit { line: l });
            }
        }
    }

    for (g, gen) in case.generators.iter().enumerate() {
        if gen.bus >= b {
            violations.push(Violation::BadGeneratorBus { generator: g });
        }
        if !gen.cost.is_finite() {
            violations.push(Violation::NonfiniteCost { generator: g });
        } else if gen.cost < 0.0 {
            // keeps the dispatch LP bounded below for any demand
            violations.push(Violation::NegativeCost { generator: g });
        }
        if let Some(pmax) = gen.pmax {
            if !(pmax >= 0.0) || !pmax.is_finite() {
                violations.push(Violation::BadPmax { generator: g });
            }
        }
    }

    if case.users.is_empty() {
        violations.push(Violation::NoUsers);
    }
    for (u, user) in case.users.iter().enumerate() {
        if user.bus >= b {
            violations.push(Violation::BadUserBus { user: u });
        }
        if !user.xbar.is_finite() || !(user.a > 0.0) || !user.a.is_finite() {
            violations.push(Violation::BadUserParams { user: u });
        }
    }

    if b > 0 && !is_connected(b, &case.lines) {
        violations.push(Violation::Disconnected);
    }

    ValidationReport { violations }
}

fn is_connected(n_buses: usize, lines: &[Line]) -> bool {
    let mut adj = vec![Vec::new(); n_buses];
    for line in lines {
        if line.from < n_buses && line.to < n_buses && line.from != line.to {
            adj[line.from].push(line.to);
            adj[line.to].push(line.from);
        }
    }
    let mut seen = vec![false; n_buses];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Dense L x B matrix of power transfer distribution factors.
///
/// Row `l`, column `b` holds the MW flow induced on line `l` (positive in
/// the line's `from -> to` orientation) by 1 MW injected at bus `b` and
/// withdrawn at the slack. The slack column is identically zero.
#[derive(Debug, Clone)]
pub struct PtdfMatrix {
    data: DMatrix<f64>,
}

impl PtdfMatrix {
    pub fn n_lines(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_buses(&self) -> usize {
        self.data.ncols()
    }

    pub fn entry(&self, line: usize, bus: usize) -> f64 {
        self.data[(line, bus)]
    }

    /// Line flows induced by a vector of net nodal injections.
    ///
    /// For a balanced injection vector (entries summing to zero) these are
    /// the physical DC flows; an unbalanced vector implicitly puts the
    /// residual on the slack.
    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        assert_eq!(
            injections.len(),
            self.n_buses(),
            "injection vector length must match bus count"
        );
        (0..self.n_lines())
            .map(|l| {
                injections
                    .iter()
                    .enumerate()
                    .map(|(b, &inj)| self.data[(l, b)] * inj)
                    .sum()
            })
            .collect()
    }
}

/// Build the PTDF matrix for a validated, connected case.
///
/// The reduced nodal susceptance matrix (slack row and column removed) is
/// inverted once; each PTDF row is the susceptance-weighted difference of
/// the endpoint rows of that inverse. Rejects invalid cases and networks
/// whose reduced matrix is numerically singular.
pub fn build_ptdf(case: &GridCase) -> Result<PtdfMatrix, GridError> {
    let report = validate_case(case);
    if !report.is_ok() {
        return Err(GridError::Invalid(report));
    }

    let b = case.n_buses();
    let n_lines = case.lines.len();
    let slack = case.slack_bus;

    if b == 1 {
        // single-bus case: no lines can exist, so the matrix is 0 x 1
        return Ok(PtdfMatrix {
            data: DMatrix::zeros(n_lines, 1),
        });
    }

    let mut laplacian = DMatrix::zeros(b, b);
    for line in &case.lines {
        let (f, t, s) = (line.from, line.to, line.susceptance);
        laplacian[(f, f)] += s;
        laplacian[(t, t)] += s;
        laplacian[(f, t)] -= s;
        laplacian[(t, f)] -= s;
    }

    // position of each non-slack bus in the reduced system
    let keep: Vec<usize> = (0..b).filter(|&i| i != slack).collect();
    let mut pos = vec![usize::MAX; b];
    for (i, &bus) in keep.iter().enumerate() {
        pos[bus] = i;
    }

    let reduced = DMatrix::from_fn(b - 1, b - 1, |i, j| laplacian[(keep[i], keep[j])]);
    let inverse = reduced
        .clone()
        .lu()
        .try_inverse()
        .ok_or(GridError::IllConditioned)?;

    // guard against near-singular systems that LU nominally survives
    let residual = (&reduced * &inverse - DMatrix::<f64>::identity(b - 1, b - 1)).abs();
    if residual.max() > 1e-6 {
        return Err(GridError::IllConditioned);
    }

    // angle sensitivity of bus `v` to injection at bus `j`: inverse[(pos[v], pos[j])],
    // zero whenever either index is the slack
    let theta = |v: usize, j: usize| -> f64 {
        if v == slack || j == slack {
            0.0
        } else {
            inverse[(pos[v], pos[j])]
        }
    };

    let mut data = DMatrix::zeros(n_lines, b);
    for (l, line) in case.lines.iter().enumerate() {
        for j in 0..b {
            data[(l, j)] = line.susceptance * (theta(line.from, j) - theta(line.to, j));
        }
    }

    Ok(PtdfMatrix { data })
}
