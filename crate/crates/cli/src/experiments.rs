//! The seven experiments. Each returns an [`Outcome`]; nothing here touches
//! the file system.

use std::fmt::Write as _;
use std::sync::Arc;

use loopgap_core::girsanov::{
    estimate_quadratic_variation, piecewise_constant_projection, recover_brownian,
    reweighted_value, weight_l2_gap, LambdaSpec,
};
use loopgap_core::hjb::{extract_policy, solve, HjbSolution, StateProblem};
use loopgap_core::mc::{
    estimate_value, ks_uniformity_test, mean_and_stderr, value_envelope, PolicyFamily,
};
use loopgap_core::paths::PathView;
use loopgap_core::sde::{simulate, simulate_with_brownian, ActionSet, ControlProblem, Policy};
use loopgap_core::tsirelson::{
    closed_loop_tsirelson_policy, consistency_check_ank, deterministic_open_loop_probes,
    extend_alpha_k, fractional_uniformity_samples, open_loop_probe_family, recursion_residual,
    theta, tsirelson_problem, Agreement, TsirelsonDrift,
};
use loopgap_core::{Result, RngStream, TimeGrid};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::report::{Check, Outcome, Record};

/// `P(B_1 >= 0) = Phi(0)`: the indicator benchmark's value with `a = 1`.
pub const TRIANGLE_ORACLE: f64 = 0.5;
pub const TRIANGLE_TOLERANCE: f64 = 2e-2;

/// `dX = a dt + sigma dB`, `A = [0, 1]`, `x0 = 0`, payoff `g(X_T)`.
pub fn benchmark_problem(
    horizon: f64,
    sigma: f64,
    g: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> StateProblem {
    StateProblem::new(
        horizon,
        0.0,
        ActionSet::unit(),
        |_, _, a| a,
        move |_, _, _| sigma,
        g,
    )
}

fn indicator_at_one(x: f64) -> f64 {
    if x >= 1.0 {
        1.0
    } else {
        0.0
    }
}

/// Runs a validated, resolved config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.experiment {
        ExperimentKind::TsirelsonGap => tsirelson_gap(cfg),
        ExperimentKind::Uniformity => uniformity(cfg),
        ExperimentKind::RecursionCheck => recursion_check(cfg),
        ExperimentKind::GirsanovCheck => girsanov_check(cfg),
        ExperimentKind::QvRecovery => qv_recovery(cfg),
        ExperimentKind::HjbBenchmark => hjb_benchmark(cfg),
        ExperimentKind::EquivalenceTriangle => equivalence_triangle(cfg),
    }
}

fn tsirelson_gap(cfg: &ExperimentConfig) -> Result<Outcome> {
    let name = cfg.experiment.name();
    let grid = cfg.tsirelson_grid()?;
    let relax = cfg.relaxation_config(&grid)?;
    let problem = tsirelson_problem(&grid, relax);
    let (n, seed) = (cfg.n_paths(), cfg.mc.master_seed);

    let closed = estimate_value(
        &problem,
        &closed_loop_tsirelson_policy(&grid),
        &grid,
        n,
        seed,
    )?;
    let family = open_loop_probe_family(&grid);
    let env = value_envelope(&problem, &family, &grid, n, seed)?;

    let mut out = Outcome::default();
    out.records.push(
        Record::from_estimate(name, "closed-loop:tsirelson-mu", &closed)
            .with("epsilon", relax.tolerance)
            .with("window", relax.window),
    );
    for (desc, est) in &env.per_member {
        out.records.push(Record::from_estimate(
            name,
            format!("open-loop:{desc}"),
            est,
        ));
    }
    out.records.push(
        Record::from_estimate(name, "open-loop:family-envelope", &env.best)
            .with("best_index", env.best_index as f64)
            .with("family_size", env.per_member.len() as f64),
    );
    let gap = closed.mean - env.best.mean;
    let gap_se = closed.stderr.hypot(env.best.stderr);
    out.records.push(Record::sampled(
        name,
        "gap:closed-minus-envelope",
        gap,
        gap_se,
        n,
        seed,
    ));

    out.checks.push(Check::new(
        "closed-loop value >= 0.99",
        closed.mean >= 0.99,
        format!("{:.6}", closed.mean),
    ));
    out.checks.push(Check::new(
        "open-loop envelope <= 0.05",
        env.best.mean <= 0.05,
        format!("{:.6} (best member {})", env.best.mean, env.best_member()),
    ));
    out.checks.push(Check::new(
        "gap >= 0.9 with disjoint 95% intervals",
        gap >= 0.9 && !closed.ci_overlaps(&env.best),
        format!("{gap:.6}"),
    ));
    out.notes.push(env.label());
    Ok(out)
}

fn uniformity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let name = cfg.experiment.name();
    let grid = cfg.tsirelson_grid()?;
    let (n, seed) = (cfg.n_paths(), cfg.mc.master_seed);
    let streams = RngStream::family(seed, n);
    let mut out = Outcome::default();
    let mut csv = String::from("k,stream,eta\n");
    for &k in &cfg.checks.uniformity_levels {
        let eta = fractional_uniformity_samples(&grid, &streams, k)?;
        let ks = ks_uniformity_test(&eta)?;
        let (mean, se) = mean_and_stderr(&eta);
        out.records.push(
            Record::sampled(name, format!("eta:k={k}"), mean, se, n, seed)
                .with("ks_statistic", ks.statistic)
                .with("ks_critical", ks.critical)
                .with("reject_at_1pct", f64::from(u8::from(ks.reject_at_1pct))),
        );
        out.checks.push(Check::new(
            format!("KS uniformity of eta_{k} at 1%"),
            !ks.reject_at_1pct,
            format!("D = {:.6}, critical {:.6}", ks.statistic, ks.critical),
        ));
        for (i, e) in eta.iter().enumerate() {
            let _ = writeln!(csv, "{k},{i},{e}");
        }
    }
    out.csv.push(("uniformity_samples.csv".into(), csv));
    Ok(out)
}

fn recursion_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let name = cfg.experiment.name();
    let grid = cfg.tsirelson_grid()?;
    let eps = cfg.relaxation_config(&grid)?.tolerance;
    let (n, seed) = (cfg.n_paths(), cfg.mc.master_seed);
    let drift = TsirelsonDrift::new(grid.clone());
    let problem = tsirelson_problem(&grid, cfg.relaxation_config(&grid)?).with_payoff(|_| 0.0);
    let policy = closed_loop_tsirelson_policy(&grid);
    let levels = grid.levels() as i64;
    let depth = cfg.checks.consistency_depth;
    let pairs: Vec<(i64, i64)> = (depth..=-1)
        .flat_map(|nn| (nn + 1..=-1).map(move |k| (nn, k)))
        .collect();

    // per path: residual for every k, and the number of agreeing pairs
    let per_path: Vec<(Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sol = simulate(&problem, &policy, &grid, RngStream::new(seed, i as u64))?;
            let residuals = (-levels + 1..=-1)
                .map(|k| {
                    let ext = extend_alpha_k(&sol.brownian, &sol.alpha, k)?;
                    recursion_residual(&ext, k, &drift)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mut agree = 0;
            for &(nn, k) in &pairs {
                if consistency_check_ank(&sol.brownian, &sol.alpha, nn, k, eps)? == Agreement::Agree
                {
                    agree += 1;
                }
            }
            Ok((residuals, agree))
        })
        .collect::<Result<_>>()?;

    let mut out = Outcome::default();
    let mut worst: f64 = 0.0;
    for (slot, k) in (-levels + 1..=-1).enumerate() {
        let r: Vec<f64> = per_path.iter().map(|p| p.0[slot]).collect();
        let max = r.iter().copied().fold(0.0, f64::max);
        worst = worst.max(max);
        let (mean, se) = mean_and_stderr(&r);
        out.records.push(
            Record::sampled(name, format!("residual:k={k}"), mean, se, n, seed).with("max", max),
        );
    }
    let agreed: usize = per_path.iter().map(|p| p.1).sum();
    let total = pairs.len() * n;
    out.records.push(
        Record::sampled(
            name,
            "consistency:agree-fraction",
            agreed as f64 / total as f64,
            0.0,
            n,
            seed,
        )
        .with("pairs", pairs.len() as f64)
        .with("checks", total as f64),
    );
    out.checks.push(Check::new(
        "per-path recursion residual <= 10 eps",
        worst <= 10.0 * eps,
        format!("max {worst:.3e}, bound {:.3e}", 10.0 * eps),
    ));
    out.checks.push(Check::new(
        format!("alpha^n and alpha^k agree for all n < k in [{depth}, -1]"),
        agreed == total,
        format!("{agreed} / {total}"),
    ));
    Ok(out)
}

type ScalarLambda = Arc<dyn Fn(f64, &PathView<'_>, f64) -> f64 + Send + Sync>;

/// A `(lambda, g)` pair with `sigma = 1`, so `b = lambda`.
struct GirsanovPair {
    name: &'static str,
    grid: TimeGrid,
    lambda: ScalarLambda,
    bound: f64,
    policy: Policy,
    payoff: Arc<dyn Fn(&loopgap_core::SimulatedSolution) -> f64 + Send + Sync>,
}

impl GirsanovPair {
    fn problem(&self) -> ControlProblem {
        let lam = self.lambda.clone();
        let g = self.payoff.clone();
        ControlProblem::scalar(
            0.0,
            self.grid.horizon(),
            ActionSet::unit(),
            move |t, x, a| lam(t, x, a),
            |_, _, _| 1.0,
            move |s| g(s),
        )
    }

    fn lambda_spec(&self) -> LambdaSpec {
        let lam = self.lambda.clone();
        LambdaSpec::scalar(self.bound, move |t, x, a| lam(t, x, a))
    }
}

fn girsanov_pairs(uniform: &TimeGrid, tsirelson: &TimeGrid) -> Vec<GirsanovPair> {
    let unit: ScalarLambda = Arc::new(|_, _, a| a);
    let horizon = uniform.horizon();
    vec![
        GirsanovPair {
            name: "lambda=a,alpha=1,g=x_T",
            grid: uniform.clone(),
            lambda: unit.clone(),
            bound: 1.0,
            policy: Policy::closed_loop("one", |_, _| 1.0),
            payoff: Arc::new(|s| s.terminal_state()[0]),
        },
        GirsanovPair {
            name: "lambda=a,alpha=threshold,g=1{x_T>=1}",
            grid: uniform.clone(),
            lambda: unit.clone(),
            bound: 1.0,
            policy: Policy::closed_loop(
                "threshold",
                |_, x| if x.current()[0] < 0.5 { 1.0 } else { 0.3 },
            ),
            payoff: Arc::new(|s| indicator_at_one(s.terminal_state()[0])),
        },
        GirsanovPair {
            name: "lambda=a-tanh(x)/2,alpha=sin,g=x_T^2",
            grid: uniform.clone(),
            lambda: Arc::new(|_, x, a| a - 0.5 * x.current()[0].tanh()),
            bound: 1.5,
            policy: Policy::closed_loop("sine", |_, x| 0.5 * (1.0 + x.current()[0].sin())),
            payoff: Arc::new(|s| s.terminal_state()[0].powi(2)),
        },
        GirsanovPair {
            name: "lambda=a,alpha=tsirelson-mu,g=cos(x_T)",
            grid: tsirelson.clone(),
            lambda: unit.clone(),
            bound: 1.0,
            policy: closed_loop_tsirelson_policy(tsirelson),
            payoff: Arc::new(|s| s.terminal_state()[0].cos()),
        },
        GirsanovPair {
            name: "lambda=a,alpha=near-max,g=max_t x",
            grid: uniform.clone(),
            lambda: unit.clone(),
            bound: 1.0,
            policy: Policy::closed_loop("near-max", |_, x| {
                let run_max = (0..x.len())
                    .map(|j| x.scalar(j))
                    .fold(f64::NEG_INFINITY, f64::max);
                if x.current()[0] >= run_max - 0.5 {
                    1.0
                } else {
                    0.0
                }
            }),
            payoff: Arc::new(|s| {
                s.state
                    .values()
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            }),
        },
        GirsanovPair {
            name: "lambda=a*cos(2pi t),alpha=frac(x),g=mean_t x",
            grid: uniform.clone(),
            lambda: Arc::new(move |t, _, a| a * (2.0 * std::f64::consts::PI * t / horizon).cos()),
            bound: 1.0,
            policy: Policy::closed_loop("frac", |_, x| theta(x.current()[0])),
            payoff: Arc::new(|s| {
                let g = s.grid();
                (0..g.steps())
                    .map(|j| 0.5 * (s.state.scalar(j) + s.state.scalar(j + 1)) * g.dt(j))
                    .sum::<f64>()
                    / g.horizon()
            }),
        },
    ]
}

/// Knots `t_0, t_{-s}, t_{-2s}, ...` plus 0, in increasing order.
pub fn every_nth_coarse_knot(grid: &TimeGrid, stride: usize) -> Vec<f64> {
    let coarse = grid.coarse_knots();
    let mut knots: Vec<f64> = coarse.iter().rev().step_by(stride).copied().collect();
    knots.push(0.0);
    knots.reverse();
    knots.dedup();
    knots
}

/// Strides of the nested projection refinements, coarsest first.
pub const PROJECTION_STRIDES: [usize; 3] = [8, 4, 2];

fn girsanov_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let name = cfg.experiment.name();
    let uniform = cfg.uniform_grid()?;
    let tsirelson = cfg.tsirelson_grid()?;
    let (n, seed) = (cfg.n_paths(), cfg.mc.master_seed);
    let mut out = Outcome::default();

    for (i, pair) in girsanov_pairs(&uniform, &tsirelson).iter().enumerate() {
        let problem = pair.problem();
        let direct_seed = seed.wrapping_add(2 * i as u64);
        let direct = estimate_value(&problem, &pair.policy, &pair.grid, n, direct_seed)?;
        let rw = reweighted_value(
            &problem,
            &pair.lambda_spec(),
            &pair.policy,
            &pair.grid,
            n,
            direct_seed.wrapping_add(1),
        )?;
        let se = direct.stderr.hypot(rw.estimate.stderr);
        let diff = rw.estimate.mean - direct.mean;
        out.records.push(Record::from_estimate(
            name,
            format!("direct:{}", pair.name),
            &direct,
        ));
        out.records.push(
            Record::from_estimate(name, format!("reweighted:{}", pair.name), &rw.estimate)
                .with("effective_sample_size", rw.effective_sample_size)
                .with("mean_weight", rw.mean_weight)
                .with("self_normalized_mean", rw.self_normalized_mean)
                .with("self_normalized_stderr", rw.self_normalized_stderr),
        );
        out.checks.push(Check::new(
            format!("reweighted = direct within 3 se: {}", pair.name),
            diff.abs() <= 3.0 * se,
            format!("diff {diff:.5}, 3 se {:.5}", 3.0 * se),
        ));
    }

    // projection refinement for the mu-policy weights, on common paths
    let mu_pair = GirsanovPair {
        name: "projection",
        grid: tsirelson.clone(),
        lambda: Arc::new(|_, _, a| a),
        bound: 1.0,
        policy: closed_loop_tsirelson_policy(&tsirelson),
        payoff: Arc::new(|_| 0.0),
    };
    let problem = mu_pair.problem();
    let lam = mu_pair.lambda_spec();
    let mut gaps = Vec::new();
    for stride in PROJECTION_STRIDES.into_iter().chain([1]) {
        let knots = every_nth_coarse_knot(&tsirelson, stride);
        let proj = piecewise_constant_projection(&mu_pair.policy, &knots, &tsirelson)?;
        let (gap, se) = weight_l2_gap(&problem, &lam, &mu_pair.policy, &proj, &tsirelson, n, seed)?;
        out.records.push(
            Record::sampled(
                name,
                format!("projection-l2-gap:every-{stride}-coarse-knots"),
                gap,
                se,
                n,
                seed,
            )
            .with("knots", knots.len() as f64),
        );
        gaps.push(gap);
    }
    out.checks.push(Check::new(
        "projection L2 gap decreases across nested refinements",
        gaps.windows(2)
            .take(PROJECTION_STRIDES.len() - 1)
            .all(|w| w[1] < w[0]),
        format!(
            "{:.5e} > {:.5e} > {:.5e} (all knots: {:.1e})",
            gaps[0], gaps[1], gaps[2], gaps[3]
        ),
    ));
    out.notes.push(
        "reweighted mean is the plain average of N_T g(X0); the self-normalized ratio is reported alongside".into(),
    );
    Ok(out)
}

struct RecoveryCase {
    name: &'static str,
    grid: TimeGrid,
    problem: ControlProblem,
    /// Expected `d<X>/dt` for the realized-variance illustration.
    variance: Option<f64>,
}

fn recovery_cases(uniform: &TimeGrid, tsirelson: &TimeGrid) -> Vec<RecoveryCase> {
    let free = ControlProblem::scalar(
        0.0,
        uniform.horizon(),
        ActionSet::unit(),
        |_, _, _| 0.0,
        |_, _, _| 1.0,
        |_| 0.0,
    );
    let drift = TsirelsonDrift::new(tsirelson.clone());
    let mu = ControlProblem::scalar(
        0.0,
        tsirelson.horizon(),
        ActionSet::unit(),
        move |_, x, _| drift.mu_at_index(x.last_index(), x),
        |_, _, _| 1.0,
        |_| 0.0,
    );
    let diag = ControlProblem::new(
        vec![0.0, 0.0],
        2,
        uniform.horizon(),
        ActionSet::unit(),
        Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        Arc::new(|_, _, _, out: &mut [f64]| out.copy_from_slice(&[2.0, 0.0, 0.0, 2.0])),
        Arc::new(|_| 0.0),
    );
    vec![
        RecoveryCase {
            name: "b=0,sigma=1",
            grid: uniform.clone(),
            problem: free,
            variance: Some(1.0),
        },
        RecoveryCase {
            name: "b=mu(t,X),sigma=1",
            grid: tsirelson.clone(),
            problem: mu,
            variance: None,
        },
        RecoveryCase {
            name: "b=0,sigma=diag(2)",
            grid: uniform.clone(),
            problem: diag,
            variance: Some(4.0),
        },
    ]
}

pub const ROUND_TRIP_TOLERANCE: f64 = 1e-10;

fn qv_recovery(cfg: &ExperimentConfig) -> Result<Outcome> {
    let name = cfg.experiment.name();
    let uniform = cfg.uniform_grid()?;
    let tsirelson = cfg.tsirelson_grid()?;
    let (n, seed) = (cfg.n_paths(), cfg.mc.master_seed);
    let window = cfg.checks.qv_window.min(uniform.steps());
    let policy = Policy::closed_loop("zero", |_, _| 0.0);
    let mut out = Outcome::default();

    for case in recovery_cases(&uniform, &tsirelson) {
        // (round-trip state error, recovered-noise error, realized variance at T)
        let per_path: Vec<(f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let sol = simulate(
                    &case.problem,
                    &policy,
                    &case.grid,
                    RngStream::new(seed, i as u64),
                )?;
                let rec = recover_brownian(&case.problem, &sol.state)?;
                let again = simulate_with_brownian(&case.problem, &policy, &rec)?;
                let max_abs = |a: &[f64], b: &[f64]| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max)
                };
                let state_err = max_abs(again.state.values(), sol.state.values());
                let noise_err = max_abs(rec.values(), sol.brownian.values());
                let qv = estimate_quadratic_variation(&sol.state, window)?;
                let last = qv.at(qv.len() - 1);
                let trace = (0..sol.state.dim())
                    .map(|r| last[r * sol.state.dim() + r])
                    .sum::<f64>()
                    / sol.state.dim() as f64;
                Ok((state_err, noise_err, trace))
            })
            .collect::<Result<_>>()?;
        let state_err: Vec<f64> = per_path.iter().map(|p| p.0).collect();
        let worst = state_err.iter().copied().fold(0.0, f64::max);
        let worst_noise = per_path.iter().map(|p| p.1).fold(0.0, f64::max);
        let (mean, se) = mean_and_stderr(&state_err);
        out.records.push(
            Record::sampled(name, format!("round-trip:{}", case.name), mean, se, n, seed)
                .with("max_state_error", worst)
                .with("max_noise_error", worst_noise),
        );
        out.checks.push(Check::new(
            format!(
                "round trip reproduces X within {ROUND_TRIP_TOLERANCE:e}: {}",
                case.name
            ),
            worst <= ROUND_TRIP_TOLERANCE,
            format!("max error {worst:.3e}"),
        ));
        if let Some(var) = case.variance {
            let qv: Vec<f64> = per_path.iter().map(|p| p.2).collect();
            let (m, s) = mean_and_stderr(&qv);
            out.records.push(
                Record::sampled(
                    name,
                    format!("realized-variance:{}", case.name),
                    m,
                    s,
                    n,
                    seed,
                )
                .with("expected", var)
                .with("window", window as f64),
            );
        }
    }
    Ok(out)
}

fn hjb_value_record(name: &str, member: &str, sol: &HjbSolution, oracle: f64, seed: u64) -> Record {
    Record::exact(name, member, sol.initial_value(), seed)
        .with("oracle", oracle)
        .with("abs_error", (sol.initial_value() - oracle).abs())
}

fn hjb_benchmark(cfg: &ExperimentConfig) -> Result<Outcome> {
    let name = cfg.experiment.name();
    let seed = cfg.mc.master_seed;
    let horizon = cfg.grid.horizon;
    let grid = cfg.hjb.grid();
    let actions = ActionSet::unit().sample(cfg.hjb.action_resolution);
    let mut out = Outcome::default();

    let linear = solve(&benchmark_problem(horizon, 1.0, |x| x), &grid, &actions)?;
    out.records.push(hjb_value_record(
        name,
        "sigma=1,g=x",
        &linear,
        horizon,
        seed,
    ));
    out.checks.push(Check::new(
        "v(0,0) = x0 + T for g(x) = x within 1e-2",
        (linear.initial_value() - horizon).abs() <= 1e-2,
        format!("{:.6}", linear.initial_value()),
    ));

    let indicator = solve(
        &benchmark_problem(horizon, 1.0, indicator_at_one),
        &grid,
        &actions,
    )?;
    out.records.push(hjb_value_record(
        name,
        "sigma=1,g=1{x>=1}",
        &indicator,
        TRIANGLE_ORACLE,
        seed,
    ));
    out.checks.push(Check::new(
        "v(0,0) = Phi(0) for the indicator within 2e-2",
        (indicator.initial_value() - TRIANGLE_ORACLE).abs() <= TRIANGLE_TOLERANCE,
        format!("{:.6}", indicator.initial_value()),
    ));
    let in_range =
        (0..=grid.n_t).all(|n| indicator.layer(n).iter().all(|v| (0.0..=1.0).contains(v)));
    out.checks.push(Check::new(
        "discrete maximum principle",
        in_range,
        "min g <= v <= max g",
    ));

    let deterministic = solve(&benchmark_problem(horizon, 0.0, |x| x), &grid, &actions)?;
    out.records.push(hjb_value_record(
        name,
        "sigma=0,g=x",
        &deterministic,
        horizon,
        seed,
    ));
    out.checks.push(Check::new(
        "v(0,0) = x0 + T without noise within dx",
        (deterministic.initial_value() - horizon).abs() <= grid.dx(),
        format!("{:.6}", deterministic.initial_value()),
    ));

    let frozen = StateProblem::new(
        horizon,
        0.0,
        ActionSet::unit(),
        |_, _, _| 0.0,
        |_, _, _| 0.0,
        indicator_at_one,
    );
    let degenerate = solve(&frozen, &grid, &actions)?;
    let mismatches = (0..=grid.n_t)
        .flat_map(|n| (0..grid.n_x).map(move |i| (n, i)))
        .filter(|&(n, i)| degenerate.value(n, i) != indicator_at_one(grid.node(i)))
        .count();
    out.records.push(
        Record::exact(
            name,
            "b=0,sigma=0,g=1{x>=1}:mismatched-nodes",
            mismatches as f64,
            seed,
        )
        .with("nodes", ((grid.n_t + 1) * grid.n_x) as f64),
    );
    out.checks.push(Check::new(
        "degenerate dynamics keep v = g at every node",
        mismatches == 0,
        format!("{mismatches} mismatches"),
    ));

    let mut csv = Vec::new();
    indicator
        .write_csv(&mut csv, (grid.n_t / 50).max(1), (grid.n_x / 140).max(1))
        .expect("writing to memory");
    out.csv.push((
        "hjb_indicator.csv".into(),
        String::from_utf8(csv).expect("ascii"),
    ));
    Ok(out)
}

/// Constants `0, 0.1, ..., 1` and five deterministic schedules.
pub fn deterministic_open_loop_family(horizon: f64) -> Result<PolicyFamily> {
    PolicyFamily::new(
        "deterministic open-loop",
        deterministic_open_loop_probes(horizon),
    )
}

fn equivalence_triangle(cfg: &ExperimentConfig) -> Result<Outcome> {
    let name = cfg.experiment.name();
    let (n, seed) = (cfg.n_paths(), cfg.mc.master_seed);
    let horizon = cfg.grid.horizon;
    let problem = benchmark_problem(horizon, 1.0, indicator_at_one);
    let actions = ActionSet::unit().sample(cfg.hjb.action_resolution);
    let sol = solve(&problem, &cfg.hjb.grid(), &actions)?;
    let v0 = sol.initial_value();

    let mc_grid = cfg.uniform_grid()?;
    let control = problem.to_control_problem();
    let feedback = estimate_value(&control, &extract_policy(&sol), &mc_grid, n, seed)?;
    let family = deterministic_open_loop_family(horizon)?;
    let env = value_envelope(&control, &family, &mc_grid, n, seed.wrapping_add(1))?;

    let mut out = Outcome::default();
    out.records
        .push(Record::exact(name, "hjb:v(0,x0)", v0, seed).with("oracle", TRIANGLE_ORACLE));
    out.records.push(Record::from_estimate(
        name,
        "closed-loop:hjb-feedback",
        &feedback,
    ));
    for (desc, est) in &env.per_member {
        out.records.push(Record::from_estimate(
            name,
            format!("open-loop:{desc}"),
            est,
        ));
    }
    out.records.push(
        Record::from_estimate(name, "open-loop:family-envelope", &env.best)
            .with("best_index", env.best_index as f64),
    );
    for (label, value) in [
        ("HJB value", v0),
        ("feedback MC value", feedback.mean),
        ("open-loop envelope", env.best.mean),
    ] {
        out.checks.push(Check::new(
            format!("{label} within {TRIANGLE_TOLERANCE} of Phi(0)"),
            (value - TRIANGLE_ORACLE).abs() <= TRIANGLE_TOLERANCE,
            format!("{value:.6}"),
        ));
    }
    out.notes.push(env.label());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_knot_selection_is_nested() {
        let g = TimeGrid::tsirelson(1.0, 20, 0.5, 4).unwrap();
        let sets: Vec<Vec<f64>> = [8, 4, 2, 1]
            .iter()
            .map(|&s| every_nth_coarse_knot(&g, s))
            .collect();
        for w in sets.windows(2) {
            assert!(w[0].iter().all(|k| w[1].contains(k)));
        }
        assert_eq!(sets[0], vec![0.0, 0.5f64.powi(16), 0.5f64.powi(8), 1.0]);
        assert_eq!(sets[3].len(), 22);
    }

    #[test]
    fn deterministic_family_has_sixteen_members() {
        assert_eq!(deterministic_open_loop_family(1.0).unwrap().len(), 16);
    }
}
