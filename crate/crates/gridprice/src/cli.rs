//! Command-line entry points.
//!
//! Four subcommands: `run` integrates the pricing mechanism and writes
//! `trajectory.csv` + `summary.json`; `oracle` certifies the terminal
//! point against the planner problem (grid search or KKT probes); `gen`
//! instantiates a topology template with seeded random costs; `validate`
//! checks a case file. All outputs are deterministic functions of
//! (case bytes, flags, seed).

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dispatch::{evaluate_cost, DemandProfile, DispatchError};
use crate::dynamics::{run, PriceProfile, RunConfig, RunStatus, Trajectory};
use crate::grid::{build_ptdf, validate_case, CaseTemplate, GridCase};
use crate::oracle::{grid_search, joint_lp_kkt_check, OracleMethod, SearchBox};
use crate::users::UserSet;

/// Merge tolerance when counting distinct terminal LMP values.
const LMP_CLUSTER_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "gridprice",
    about = "Adaptive incentive pricing over DCOPF networks",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pricing mechanism on a case and write trajectory.csv + summary.json
    Run {
        /// Path to the JSON case file
        case: PathBuf,
        /// Seed for the initial price draw
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Euler step size
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Convergence tolerance on the fixed-point residual
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Maximum number of price updates
        #[arg(long = "max-iters", default_value_t = 20_000)]
        max_iters: usize,
        /// Value of lost load in $/MWh; keeps unservable demand finite
        /// (1000 when the flag is given without a value)
        #[arg(long, num_args = 0..=1, default_missing_value = "1000")]
        voll: Option<f64>,
        /// Output directory (default: $GRIDPRICE_OUT or ".")
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record every k-th step in the trajectory
        #[arg(long = "record-every", default_value_t = 1)]
        record_every: usize,
        /// Also write the terminal DispatchResult as dispatch.json
        #[arg(long = "dump-dispatch")]
        dump_dispatch: bool,
    },
    /// Certify a run against the planner problem
    Oracle {
        /// Path to the JSON case file
        case: PathBuf,
        /// grid: brute-force search (needs <= 3 users); kkt: first-order check
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Grid pitch in MW
        #[arg(long, default_value_t = 1e-3)]
        pitch: f64,
        /// Value of lost load passed through to the dispatch
        /// (1000 when the flag is given without a value)
        #[arg(long, num_args = 0..=1, default_missing_value = "1000")]
        voll: Option<f64>,
        /// Output directory; also where summary.json is looked up
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fill a topology template with seeded random generation costs
    Gen {
        /// Path to the template JSON (generator costs may be null)
        template: PathBuf,
        /// Output case file (default: `<out>/generated_case.json`)
        #[arg(long)]
        output: Option<PathBuf>,
        /// Seed for the cost draw
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lower end of the cost range
        #[arg(long = "cost-lo", default_value_t = 5.0)]
        cost_lo: f64,
        /// Upper end of the cost range
        #[arg(long = "cost-hi", default_value_t = 20.0)]
        cost_hi: f64,
        /// Output directory used for the default output path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a case file and print the report
    Validate {
        /// Path to the JSON case file
        case: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Grid,
    Kkt,
}

/// Everything a reproducible experiment run depends on.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub case_path: PathBuf,
    pub cost_range: (f64, f64),
    pub price_init_range: (f64, f64),
    pub rng_seed: u64,
    pub run: RunConfig,
    pub out_dir: PathBuf,
    pub dump_dispatch: bool,
}

impl ExperimentSpec {
    pub fn new(case_path: PathBuf, out_dir: PathBuf) -> Self {
        ExperimentSpec {
            case_path,
            cost_range: (5.0, 20.0),
            price_init_range: (5.0, 15.0),
            rng_seed: 0,
            run: RunConfig::default(),
            out_dir,
            dump_dispatch: false,
        }
    }
}

/// A failure with its process exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn unservable(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    fn grid_too_large(message: impl Into<String>) -> Self {
        CliError {
            code: 4,
            message: message.into(),
        }
    }

    fn generic(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("GRIDPRICE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Execute a parsed command line; returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Run {
            case,
            seed,
            alpha,
            tol,
            max_iters,
            voll,
            out,
            record_every,
            dump_dispatch,
        } => {
            let mut spec = ExperimentSpec::new(case, resolve_out_dir(out));
            spec.rng_seed = seed;
            spec.run = RunConfig {
                step_size: alpha,
                max_iters,
                residual_tol: tol,
                rng_seed: seed,
                voll,
                record_every,
            };
            spec.dump_dispatch = dump_dispatch;
            cmd_run(&spec).map(|status| match status {
                RunStatus::Converged => 0,
                RunStatus::MaxIters => 1,
                RunStatus::Error => 3,
            })
        }
        Command::Oracle {
            case,
            method,
            pitch,
            voll,
            out,
        } => cmd_oracle(&case, method, pitch, voll, &resolve_out_dir(out)).map(|_| 0),
        Command::Gen {
            template,
            output,
            seed,
            cost_lo,
            cost_hi,
            out,
        } => {
            let out_dir = resolve_out_dir(out);
            let output = output.unwrap_or_else(|| out_dir.join("generated_case.json"));
            cmd_gen(&template, &output, (cost_lo, cost_hi), seed).map(|_| 0)
        }
        Command::Validate { case } => cmd_validate(&case).map(|_| 0),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn load_validated(path: &Path) -> Result<GridCase, CliError> {
    let case = GridCase::load(path).map_err(|e| CliError::validation(e.to_string()))?;
    let report = validate_case(&case);
    if !report.is_ok() {
        return Err(CliError::validation(format!(
            "case {} is invalid:\n{report}",
            path.display()
        )));
    }
    Ok(case)
}

/// Terminal state block of `summary.json`.
#[derive(Debug, Serialize)]
struct TerminalSummary {
    prices: Vec<f64>,
    demand: Vec<f64>,
    lmp: Vec<f64>,
    cost: f64,
    welfare_cost: f64,
    residual: f64,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    case: String,
    seed: u64,
    alpha: f64,
    status: RunStatus,
    /// Euler updates applied.
    steps: usize,
    /// Dispatch evaluations performed (steps + 1 on convergence).
    evaluations: usize,
    lmp_clusters: usize,
    terminal: TerminalSummary,
}

/// Count distinct values after merging within `LMP_CLUSTER_TOL`.
pub fn lmp_cluster_count(lmp: &[f64]) -> usize {
    if lmp.is_empty() {
        return 0;
    }
    let mut sorted = lmp.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite lmp"));
    1 + sorted
        .windows(2)
        .filter(|w| (w[1] - w[0]).abs() > LMP_CLUSTER_TOL)
        .count()
}

/// Load a case, integrate the mechanism, and write the artifacts.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<RunStatus, CliError> {
    let case = load_validated(&spec.case_path)?;
    let ptdf = build_ptdf(&case).map_err(|e| CliError::validation(e.to_string()))?;
    let users = UserSet::from_case(&case);

    let p0 = draw_initial_prices(case.n_users(), spec.rng_seed, spec.price_init_range);
    let traj = run(&case, &ptdf, &users, &p0, &spec.run);

    if traj.records.is_empty() {
        // the very first dispatch failed; nothing worth writing
        return Err(CliError::unservable(
            traj.error
                .unwrap_or_else(|| "run failed before the first record".into()),
        ));
    }

    fs::create_dir_all(&spec.out_dir)
        .map_err(|e| CliError::generic(format!("cannot create output dir: {e}")))?;

    let csv_path = spec.out_dir.join("trajectory.csv");
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)
        .map_err(|e| CliError::generic(format!("cannot serialize trajectory: {e}")))?;
    fs::write(&csv_path, csv)
        .map_err(|e| CliError::generic(format!("cannot write {}: {e}", csv_path.display())))?;

    let term = traj.terminal();
    let summary = RunSummary {
        case: spec.case_path.display().to_string(),
        seed: spec.rng_seed,
        alpha: spec.run.step_size,
        status: traj.status,
        steps: traj.steps,
        evaluations: traj.evaluations,
        lmp_clusters: lmp_cluster_count(&term.lmp),
        terminal: TerminalSummary {
            prices: term.prices.clone(),
            demand: term.demand.clone(),
            lmp: term.lmp.clone(),
            cost: term.cost,
            welfare_cost: term.welfare_cost,
            residual: term.residual,
        },
    };
    write_json(&spec.out_dir.join("summary.json"), &summary)?;

    if spec.dump_dispatch {
        let dispatch = evaluate_cost(
            &case,
            &ptdf,
            &DemandProfile(term.demand.clone()),
            spec.run.voll,
        )
        .map_err(map_dispatch_error)?;
        write_json(&spec.out_dir.join("dispatch.json"), &dispatch)?;
    }

    if let Some(err) = &traj.error {
        eprintln!("run ended early: {err}");
    }
    Ok(traj.status)
}

fn draw_initial_prices(n: usize, seed: u64, range: (f64, f64)) -> PriceProfile {
    // stream 0 is reserved for cost draws in `gen`, stream 1 for prices,
    // so the two experiments never share randomness
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    PriceProfile((0..n).map(|_| rng.gen_range(range.0..range.1)).collect())
}

fn map_dispatch_error(e: DispatchError) -> CliError {
    match e {
        DispatchError::Unservable { .. } => CliError::unservable(e.to_string()),
        other => CliError::generic(other.to_string()),
    }
}

#[derive(Debug, Serialize)]
struct OracleGap {
    dynamics_demand: Vec<f64>,
    componentwise: Vec<f64>,
    max_abs: f64,
    welfare_gap: f64,
}

#[derive(Debug, Serialize)]
struct GridOracleOutput {
    method: OracleMethod,
    pitch: f64,
    demand: Vec<f64>,
    welfare_cost: f64,
    gap: Option<OracleGap>,
}

#[derive(Debug, Serialize)]
struct KktOracleOutput {
    method: OracleMethod,
    demand: Vec<f64>,
    residual: f64,
    passed: bool,
    probes: Vec<crate::oracle::DirectionalProbe>,
}

/// Certify against the planner problem and write `oracle.json`.
pub fn cmd_oracle(
    case_path: &Path,
    method: MethodArg,
    pitch: f64,
    voll: Option<f64>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let case = load_validated(case_path)?;
    let ptdf = build_ptdf(&case).map_err(|e| CliError::validation(e.to_string()))?;
    let users = UserSet::from_case(&case);
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::generic(format!("cannot create output dir: {e}")))?;

    match method {
        MethodArg::Grid => {
            if case.n_users() > 3 {
                return Err(CliError::grid_too_large(format!(
                    "grid oracle supports at most 3 users, case has {}",
                    case.n_users()
                )));
            }
            let search = SearchBox::bracketing(&case);
            let sol = grid_search(&case, &ptdf, &users, &search, pitch, voll)
                .map_err(|e| CliError::generic(e.to_string()))?;
            // only compare against a summary that belongs to this case
            let gap = read_summary_demand(out_dir)
                .filter(|(demand, _)| demand.len() == case.n_users())
                .map(|(demand, welfare)| {
                    let componentwise: Vec<f64> = demand
                        .iter()
                        .zip(&sol.demand)
                        .map(|(d, o)| (d - o).abs())
                        .collect();
                    OracleGap {
                        max_abs: componentwise.iter().fold(0.0f64, |m, &g| m.max(g)),
                        componentwise,
                        welfare_gap: (welfare - sol.welfare_cost).abs(),
                        dynamics_demand: demand,
                    }
                });
            write_json(
                &out_dir.join("oracle.json"),
                &GridOracleOutput {
                    method: sol.method,
                    pitch,
                    demand: sol.demand,
                    welfare_cost: sol.welfare_cost,
                    gap,
                },
            )?;
        }
        MethodArg::Kkt => {
            let Some((demand, _)) = read_summary_demand(out_dir) else {
                return Err(CliError::validation(format!(
                    "kkt oracle needs a summary.json with a terminal demand in {}; \
                     run the mechanism first",
                    out_dir.display()
                )));
            };
            if demand.len() != case.n_users() {
                return Err(CliError::validation(format!(
                    "summary.json in {} has {} users but the case has {}; \
                     it belongs to a different case",
                    out_dir.display(),
                    demand.len(),
                    case.n_users()
                )));
            }
            let report = joint_lp_kkt_check(&case, &ptdf, &users, &DemandProfile(demand.clone()), voll)
                .map_err(map_dispatch_error)?;
            write_json(
                &out_dir.join("oracle.json"),
                &KktOracleOutput {
                    method: OracleMethod::JointLp,
                    demand,
                    residual: report.residual,
                    passed: report.passed,
                    probes: report.probes,
                },
            )?;
        }
    }
    Ok(())
}

/// Pull the terminal demand and welfare cost out of a previous run's summary.
fn read_summary_demand(out_dir: &Path) -> Option<(Vec<f64>, f64)> {
    let text = fs::read_to_string(out_dir.join("summary.json")).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    let terminal = value.get("terminal")?;
    let demand = terminal
        .get("demand")?
        .as_array()?
        .iter()
        .map(|v| v.as_f64())
        .collect::<Option<Vec<f64>>>()?;
    let welfare = terminal.get("welfare_cost")?.as_f64()?;
    Some((demand, welfare))
}

/// Instantiate a template with seeded uniform costs and write the case.
pub fn cmd_gen(
    template_path: &Path,
    output: &Path,
    cost_range: (f64, f64),
    seed: u64,
) -> Result<(), CliError> {
    if !(cost_range.0 <= cost_range.1) || !cost_range.0.is_finite() || !cost_range.1.is_finite() {
        return Err(CliError::validation("bad cost range".to_string()));
    }
    let template =
        CaseTemplate::load(template_path).map_err(|e| CliError::validation(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let costs: Vec<f64> = (0..template.unset_costs())
        .map(|_| {
            if cost_range.0 == cost_range.1 {
                cost_range.0
            } else {
                rng.gen_range(cost_range.0..cost_range.1)
            }
        })
        .collect();

    let case = template
        .instantiate(&costs)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let report = validate_case(&case);
    if !report.is_ok() {
        return Err(CliError::validation(format!(
            "template {} instantiates to an invalid case:\n{report}",
            template_path.display()
        )));
    }

    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::generic(format!("cannot create output dir: {e}")))?;
        }
    }
    fs::write(output, case.to_json())
        .map_err(|e| CliError::generic(format!("cannot write {}: {e}", output.display())))?;
    println!("{}", output.display());
    Ok(())
}

/// Print the validation report; exit code 2 carries violations.
pub fn cmd_validate(case_path: &Path) -> Result<(), CliError> {
    let case = GridCase::load(case_path).map_err(|e| CliError::validation(e.to_string()))?;
    let report = validate_case(&case);
    println!("{report}");
    if report.is_ok() {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "{} violation(s)",
            report.violations.len()
        )))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::generic(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::generic(format!("cannot write {}: {e}", path.display())))
}

/// Re-export used by tests to keep the trajectory type in one place.
pub type RunTrajectory = Trajectory;
