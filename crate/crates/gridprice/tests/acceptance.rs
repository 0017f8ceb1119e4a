//! Acceptance suite: one test per contract criterion, every tolerance
//! pinned in code. Each test prints a `ACCEPTANCE <name>: PASS` line
//! (visible with `cargo test --test acceptance -- --nocapture`).

mod common;

use common::{case_path, random_feasible_lp, vertex_enumeration_min};
use gridprice::users::Disutility;
use gridprice::{
    build_ptdf, evaluate_cost, grid_search, joint_lp_kkt_check, run, solve_lp,
    BindingConstraint, DemandProfile, GridCase, LpStatus, PriceProfile, PtdfMatrix,
    QuadraticDisutility, RunConfig, RunStatus, SearchBox, UserSet,
};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn load(name: &str) -> (GridCase, PtdfMatrix, UserSet) {
    let case = GridCase::load(case_path(name)).unwrap();
    let ptdf = build_ptdf(&case).unwrap();
    let users = UserSet::from_case(&case);
    (case, ptdf, users)
}

fn seeded_prices(n: usize, seed: u64) -> PriceProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    PriceProfile((0..n).map(|_| rng.gen_range(5.0..15.0)).collect())
}

fn inf_norm_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
}

/// LP core correctness: 100 seeded random feasible bounded LPs
/// (<= 8 vars, <= 8 rows); primal equals dual objective within 1e-8,
/// and equals the brute-force vertex-enumeration optimum within 1e-8 on
/// the <= 6-variable subset. Total runtime under 5 seconds.
#[test]
fn lp_core_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut oracle_checked = 0usize;
    for trial in 0..100 {
        let raw = random_feasible_lp(&mut rng, 8, 8);
        let problem = raw.to_problem();
        let solution = solve_lp(&problem).unwrap();
        assert_eq!(solution.status, LpStatus::Optimal, "trial {trial}");
        let gap = (solution.objective - solution.dual_objective(&problem)).abs();
        assert!(gap <= 1e-8, "trial {trial}: duality gap {gap:.3e}");

        if raw.n <= 6 {
            let oracle = vertex_enumeration_min(&raw).expect("oracle vertex");
            assert!(
                (solution.objective - oracle).abs() <= 1e-8,
                "trial {trial}: solver {} vs vertex oracle {}",
                solution.objective,
                oracle
            );
            oracle_checked += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "LP suite took {elapsed:.2}s (budget 5s)");
    assert!(oracle_checked >= 30, "too few small LPs for the oracle");
    println!(
        "ACCEPTANCE lp-core-correctness: PASS \
         (100 LPs, {oracle_checked} oracle-checked, {elapsed:.2}s)"
    );
}

/// Subgradient validity: 1000 random (x, y) pairs on the bundled 14-bus
/// case satisfy J(y) >= J(x) + lmp(x).(y - x) - 1e-6, within 30 seconds.
#[test]
fn subgradient_validity() {
    let start = Instant::now();
    let (case, ptdf, _) = load("ieee14");
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut profile =
        || DemandProfile((0..14).map(|_| rng.gen_range(0.0..1.2)).collect::<Vec<_>>());
    for trial in 0..1000 {
        let x = profile();
        let y = profile();
        let at_x = evaluate_cost(&case, &ptdf, &x, None).unwrap();
        let at_y = evaluate_cost(&case, &ptdf, &y, None).unwrap();
        let linear: f64 = at_x
            .lmp
            .iter()
            .zip(y.0.iter().zip(&x.0))
            .map(|(l, (yv, xv))| l * (yv - xv))
            .sum();
        assert!(
            at_y.cost >= at_x.cost + linear - 1e-6,
            "trial {trial}: J(y) = {} < {} + {}",
            at_y.cost,
            at_x.cost,
            linear
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "subgradient suite took {elapsed:.2}s");
    println!("ACCEPTANCE subgradient-validity: PASS (1000 pairs, {elapsed:.2}s)");
}

/// Best-response law: stationarity of the closed form holds exactly,
/// verified in exact rational arithmetic for 10^4 random (p, xbar, a)
/// triples, with the f64 evaluation within a few ulps (the strongest
/// statement IEEE doubles admit); the numerical derivative matches
/// -1/(2a) within 1e-8; responses strictly decrease on sorted grids.
#[test]
fn best_response_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let eps = f64::EPSILON;
    for trial in 0..10_000 {
        let p: f64 = rng.gen_range(0.0..50.0);
        let xbar: f64 = rng.gen_range(-10.0..10.0);
        let a: f64 = rng.gen_range(0.1..10.0);
        let u = QuadraticDisutility::new(xbar, a);
        let x = u.best_response(p);

        // exact stationarity of the closed form, in rational arithmetic
        let pq = BigRational::from_float(p).unwrap();
        let xbq = BigRational::from_float(xbar).unwrap();
        let two_aq = BigRational::from_float(2.0 * a).unwrap();
        let xq = &xbq - &pq / &two_aq;
        let resid_q = &two_aq * (&xq - &xbq) + &pq;
        assert!(resid_q.is_zero(), "trial {trial}: rational residual nonzero");

        // the f64 evaluation reproduces the exact value to a few ulps
        let exact = xq.to_f64().unwrap();
        let scale = xbar.abs().max((p / (2.0 * a)).abs()).max(1.0);
        assert!(
            (x - exact).abs() <= 4.0 * eps * scale,
            "trial {trial}: best response off by {:.3e}",
            (x - exact).abs()
        );

        // f64 stationarity residual at the rounding floor
        let resid = u.gradient(x) + p;
        let gscale = p.abs().max(2.0 * a * x.abs()).max(2.0 * a * xbar.abs()).max(1.0);
        assert!(
            resid.abs() <= 8.0 * eps * gscale,
            "trial {trial}: stationarity residual {resid:.3e} vs scale {gscale:.3e}"
        );
    }

    // numerical derivative of the response vs -1/(2a)
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let h = 1e-4;
    for _ in 0..200 {
        let xbar: f64 = rng.gen_range(-10.0..10.0);
        let a: f64 = rng.gen_range(0.1..10.0);
        let p: f64 = rng.gen_range(-20.0..30.0);
        let u = QuadraticDisutility::new(xbar, a);
        let fd = (u.best_response(p + h) - u.best_response(p - h)) / (2.0 * h);
        assert!(
            (fd - (-1.0 / (2.0 * a))).abs() < 1e-8,
            "derivative mismatch: {fd} vs {}",
            -1.0 / (2.0 * a)
        );
    }

    // strict monotone decrease along sorted price grids
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    for _ in 0..20 {
        let u = QuadraticDisutility::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.1..10.0));
        let mut last = f64::INFINITY;
        for i in 0..=100 {
            let p = -20.0 + i as f64 * 0.5;
            let x = u.best_response(p);
            assert!(x < last, "response not strictly decreasing at p = {p}");
            last = x;
        }
    }
    println!("ACCEPTANCE best-response-law: PASS (10^4 triples exact in Q, ulp-tight in f64)");
}

/// Equilibrium alignment: a converged 14-bus run ends with
/// ||lmp - p||_inf <= 1e-4 and passes the directional-probe KKT check
/// at every coordinate, in under 10 seconds.
#[test]
fn equilibrium_alignment() {
    let start = Instant::now();
    let (case, ptdf, users) = load("ieee14");
    let traj = run(
        &case,
        &ptdf,
        &users,
        &seeded_prices(14, 7),
        &RunConfig::default(),
    );
    assert_eq!(traj.status, RunStatus::Converged);
    let term = traj.terminal();
    assert!(
        term.residual <= 1e-4,
        "fixed-point residual {} above 1e-4",
        term.residual
    );
    let report = joint_lp_kkt_check(
        &case,
        &ptdf,
        &users,
        &DemandProfile(term.demand.clone()),
        None,
    )
    .unwrap();
    assert!(report.passed, "directional probe failed: {:?}", report.probes);
    assert!(report.residual <= 1e-4);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "alignment run took {elapsed:.2}s");
    println!(
        "ACCEPTANCE equilibrium-alignment: PASS \
         (residual {:.2e}, {} probes, {elapsed:.2}s)",
        term.residual,
        report.probes.len()
    );
}

/// Oracle equivalence: on the 1-bus and 2-bus bundled cases with pitch
/// 1e-3, the dynamics terminal demand is within 2e-3 of the grid
/// minimizer componentwise and the welfare costs agree within 1e-3;
/// the single-bus equilibrium equals the analytic (p*, x*) = (10, 3)
/// within 1e-6.
#[test]
fn oracle_equivalence() {
    let pitch = 1e-3;

    // single bus: analytic equilibrium from scalar calculus
    let (case, ptdf, users) = load("one_bus");
    let cfg = RunConfig {
        residual_tol: 2e-7,
        ..RunConfig::default()
    };
    let traj = run(&case, &ptdf, &users, &seeded_prices(1, 3), &cfg);
    assert_eq!(traj.status, RunStatus::Converged);
    let term = traj.terminal();
    assert!((term.prices[0] - 10.0).abs() <= 1e-6, "p* = {}", term.prices[0]);
    assert!((term.demand[0] - 3.0).abs() <= 1e-6, "x* = {}", term.demand[0]);

    let search = SearchBox {
        lower: vec![-2.0],
        upper: vec![10.0],
    };
    let sol = grid_search(&case, &ptdf, &users, &search, pitch, None).unwrap();
    assert!((term.demand[0] - sol.demand[0]).abs() <= 2.0 * pitch);
    assert!((term.welfare_cost - sol.welfare_cost).abs() <= 1e-3);

    // two buses: grid over a bracket containing both targets
    let (case, ptdf, users) = load("two_bus");
    let traj = run(&case, &ptdf, &users, &seeded_prices(2, 3), &RunConfig::default());
    assert_eq!(traj.status, RunStatus::Converged);
    let term = traj.terminal();
    let search = SearchBox {
        lower: vec![1.45, 1.45],
        upper: vec![2.05, 3.55],
    };
    let sol = grid_search(&case, &ptdf, &users, &search, pitch, None).unwrap();
    for (i, (xd, xg)) in term.demand.iter().zip(&sol.demand).enumerate() {
        assert!(
            (xd - xg).abs() <= 2.0 * pitch,
            "user {i}: dynamics {xd} vs grid {xg}"
        );
    }
    assert!(
        (term.welfare_cost - sol.welfare_cost).abs() <= 1e-3,
        "welfare gap {}",
        (term.welfare_cost - sol.welfare_cost).abs()
    );
    println!("ACCEPTANCE oracle-equivalence: PASS (1-bus analytic + 2-bus grid at pitch 1e-3)");
}

/// Uniqueness: 10 seeded initializations drawn uniformly from [5,15]^n
/// on the bundled 14-bus case terminate within pairwise 1e-3 in the
/// infinity norm.
#[test]
fn uniqueness_across_initializations() {
    let (case, ptdf, users) = load("ieee14");
    let cfg = RunConfig::default();
    let mut terminals = Vec::new();
    for seed in 0..10 {
        let traj = run(&case, &ptdf, &users, &seeded_prices(14, seed), &cfg);
        assert_eq!(traj.status, RunStatus::Converged, "seed {seed}");
        terminals.push(traj.terminal().prices.clone());
    }
    let mut worst = 0.0f64;
    for i in 0..terminals.len() {
        for j in i + 1..terminals.len() {
            worst = worst.max(inf_norm_gap(&terminals[i], &terminals[j]));
        }
    }
    assert!(worst <= 1e-3, "pairwise terminal gap {worst:.3e}");
    println!("ACCEPTANCE uniqueness: PASS (10 seeds, max pairwise gap {worst:.2e})");
}

/// Lyapunov descent: along every converged bundled-case trajectory with
/// alpha = 0.05, the welfare cost increases by more than 1e-9 in fewer
/// than 1% of steps, and V_terminal = 0 by construction.
#[test]
fn lyapunov_descent() {
    for name in ["one_bus", "two_bus", "three_bus", "ieee14"] {
        let (case, ptdf, users) = load(name);
        let cfg = RunConfig::default(); // alpha = 0.05, record every step
        let traj = run(
            &case,
            &ptdf,
            &users,
            &seeded_prices(case.n_users(), 17),
            &cfg,
        );
        assert_eq!(traj.status, RunStatus::Converged, "case {name}");

        let costs: Vec<f64> = traj.records.iter().map(|r| r.welfare_cost).collect();
        let increases = costs
            .windows(2)
            .filter(|w| w[1] > w[0] + 1e-9)
            .count();
        let fraction = increases as f64 / (costs.len() - 1).max(1) as f64;
        assert!(
            fraction < 0.01,
            "case {name}: C increased in {increases}/{} steps",
            costs.len() - 1
        );

        let v = traj.lyapunov_series();
        assert_eq!(*v.last().unwrap(), 0.0, "case {name}: V_terminal != 0");
        println!(
            "ACCEPTANCE lyapunov-descent[{name}]: PASS \
             ({} steps, {increases} ascents)",
            costs.len() - 1
        );
    }
}

/// Qualitative reproduction of the published picture: the 14-bus run
/// converges within the 20000-step budget, at least one line is
/// congested at the terminal point, and the terminal LMPs merge into at
/// most 5 clusters at 1e-4 tolerance.
#[test]
fn qualitative_convergence_and_clustering() {
    let (case, ptdf, users) = load("ieee14");
    let cfg = RunConfig::default();
    let traj = run(&case, &ptdf, &users, &seeded_prices(14, 7), &cfg);
    assert_eq!(traj.status, RunStatus::Converged);
    assert!(traj.steps <= 20_000);

    let term = traj.terminal();
    let dispatch = evaluate_cost(&case, &ptdf, &DemandProfile(term.demand.clone()), None).unwrap();
    let congested = dispatch.binding.iter().any(|b| {
        matches!(
            b,
            BindingConstraint::LineUpper { .. } | BindingConstraint::LineLower { .. }
        )
    });
    assert!(congested, "no line congested at the terminal point");

    let clusters = gridprice::cli::lmp_cluster_count(&term.lmp);
    assert!(clusters <= 5, "terminal LMPs form {clusters} clusters");
    println!(
        "ACCEPTANCE qualitative-fig: PASS \
         ({} steps, {clusters} LMP clusters, congestion present)",
        traj.steps
    );
}

/// Determinism: identical (case, config, seed) produce byte-identical
/// trajectory.csv files on repeated runs.
#[test]
fn byte_determinism() {
    use gridprice::cli::{cmd_run, ExperimentSpec};

    let render = || {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ExperimentSpec::new(
            case_path("ieee14").into(),
            dir.path().to_path_buf(),
        );
        spec.rng_seed = 7;
        let status = cmd_run(&spec).unwrap();
        assert_eq!(status, RunStatus::Converged);
        std::fs::read(dir.path().join("trajectory.csv")).unwrap()
    };
    let a = render();
    let b = render();
    assert_eq!(a, b, "trajectory.csv bytes differ between identical runs");
    println!("ACCEPTANCE determinism: PASS ({} identical bytes)", a.len());
}
