//! Change of measure between the drifted and the driftless dynamics.
//!
//! With `b = sigma * lambda` and `sigma` free of the action, the value of a
//! closed-loop control can be computed on the driftless state
//! `X0 = x0 + int sigma(s, X0) dB0` as `E[N_T g(X0)]`, where
//!
//! ```text
//! log N_T = sum_j lambda_j . dB0_j - 1/2 sum_j |lambda_j|^2 dt_j
//! ```
//!
//! and `lambda_j = lambda(t_j, X0_[0,t_j], alpha(t_j, X0))`. The discrete
//! identity is exact for the Euler scheme because both sides share the same
//! Gaussian step densities.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mc::{mean_and_stderr, pairwise_sum, Flags, ValueEstimate};
use crate::paths::{PathView, RngStream, SamplePath, TimeGrid};
use crate::sde::{simulate, AugmentedView, ControlProblem, Policy, PolicyKind, SimulatedSolution};

pub const DEFAULT_LOG_WEIGHT_CAP: f64 = 30.0;

/// `N_T` stored through its log-decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GirsanovWeight {
    pub log_weight: f64,
    /// `sum lambda . dB`
    pub ito_integral_part: f64,
    /// `sum |lambda|^2 dt`
    pub quadratic_part: f64,
}

impl GirsanovWeight {
    fn from_parts(ito: f64, quadratic: f64) -> Self {
        Self {
            log_weight: ito - 0.5 * quadratic,
            ito_integral_part: ito,
            quadratic_part: quadratic,
        }
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

pub type LambdaFn = Arc<dyn Fn(f64, &PathView<'_>, f64, &mut [f64]) + Send + Sync>;

/// Bounded market price of risk `lambda(t, x, a)` with values in `R^d`.
#[derive(Clone)]
pub struct LambdaSpec {
    pub lambda: LambdaFn,
    pub bound: f64,
    pub dim: usize,
}

impl std::fmt::Debug for LambdaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LambdaSpec")
            .field("bound", &self.bound)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl LambdaSpec {
    pub fn scalar(
        bound: f64,
        lambda: impl Fn(f64, &PathView<'_>, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            lambda: Arc::new(move |t, x, a, out| out[0] = lambda(t, x, a)),
            bound,
            dim: 1,
        }
    }
}

/// Exponentiates `sum lambda_j . dB_j - 1/2 sum |lambda_j|^2 dt_j`.
/// `lambda_values` holds `d` values per Euler step.
pub fn stochastic_exponential(
    lambda_values: &[f64],
    brownian: &SamplePath,
) -> Result<GirsanovWeight> {
    let grid = brownian.grid();
    let d = brownian.dim();
    if lambda_values.len() != grid.steps() * d {
        return Err(Error::Dimension {
            expected: grid.steps() * d,
            got: lambda_values.len(),
            context: "lambda values per step",
        });
    }
    let mut ito = 0.0;
    let mut quad = 0.0;
    for j in 0..grid.steps() {
        let lam = &lambda_values[j * d..(j + 1) * d];
        let (b0, b1) = (brownian.at(j), brownian.at(j + 1));
        for i in 0..d {
            ito += lam[i] * (b1[i] - b0[i]);
            quad += lam[i] * lam[i] * grid.dt(j);
        }
        if !(ito.is_finite() && quad.is_finite()) {
            return Err(Error::NonFinite {
                what: "stochastic exponent",
                step: j,
            });
        }
    }
    let w = GirsanovWeight::from_parts(ito, quad);
    if !w.weight().is_finite() {
        return Err(Error::NonFinite {
            what: "Girsanov weight",
            step: grid.steps(),
        });
    }
    Ok(w)
}

fn require_state_policy(policy: &Policy) -> Result<()> {
    match policy.kind() {
        PolicyKind::ClosedLoop | PolicyKind::Feedback => Ok(()),
        other => Err(Error::PolicyKind {
            expected: "closed-loop or feedback",
            got: other.name(),
        }),
    }
}

/// Actions of `policy` along an existing solution, clamped to `A`.
pub fn actions_along(
    problem: &ControlProblem,
    policy: &Policy,
    solution: &SimulatedSolution,
) -> Vec<f64> {
    let grid = solution.grid();
    let knots = grid.fine_knots();
    (0..grid.steps())
        .map(|j| {
            let view = AugmentedView {
                brownian: solution.brownian.view(j),
                state: solution.state.view(j),
                gamma: solution.gamma.view(j),
            };
            problem.actions.clamp(policy.action(knots[j], &view)).0
        })
        .collect()
}

/// `lambda_j` for every step, checked against the bound.
pub fn lambda_along(lambda: &LambdaSpec, state: &SamplePath, actions: &[f64]) -> Result<Vec<f64>> {
    let grid = state.grid();
    let d = lambda.dim;
    let mut out = vec![0.0; grid.steps() * d];
    for j in 0..grid.steps() {
        let slot = &mut out[j * d..(j + 1) * d];
        (lambda.lambda)(grid.fine_knots()[j], &state.view(j), actions[j], slot);
        for &v in slot.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "lambda",
                    step: j,
                });
            }
            if v.abs() > lambda.bound {
                return Err(Error::CoefficientBound {
                    what: "lambda",
                    value: v.abs(),
                    bound: lambda.bound,
                    step: j,
                });
            }
        }
    }
    Ok(out)
}

fn driftless(problem: &ControlProblem) -> ControlProblem {
    problem
        .clone()
        .with_drift(Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)))
}

/// Driftless path of one stream together with the weight of `policy`.
pub fn weighted_path(
    problem: &ControlProblem,
    lambda: &LambdaSpec,
    policy: &Policy,
    grid: &TimeGrid,
    stream: RngStream,
) -> Result<(SimulatedSolution, GirsanovWeight)> {
    require_state_policy(policy)?;
    if lambda.dim != problem.noise_dim {
        return Err(Error::Dimension {
            expected: problem.noise_dim,
            got: lambda.dim,
            context: "lambda dimension",
        });
    }
    let sol = simulate(&driftless(problem), policy, grid, stream)?;
    let actions = &sol.alpha.values()[..grid.steps()];
    let lam = lambda_along(lambda, &sol.state, actions)?;
    let w = stochastic_exponential(&lam, &sol.brownian)?;
    Ok((sol, w))
}

/// Importance-weighted value `E0[N_T g(X0)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightedEstimate {
    /// Plain mean of `N_T g(X0)`, unbiased for the drifted value.
    pub estimate: ValueEstimate,
    /// `sum w g / sum w` with its delta-method standard error.
    pub self_normalized_mean: f64,
    pub self_normalized_stderr: f64,
    /// `(sum w)^2 / sum w^2`.
    pub effective_sample_size: f64,
    pub mean_weight: f64,
}

pub fn reweighted_value(
    problem: &ControlProblem,
    lambda: &LambdaSpec,
    policy: &Policy,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
) -> Result<ReweightedEstimate> {
    reweighted_value_with_cap(
        problem,
        lambda,
        policy,
        grid,
        n_paths,
        master_seed,
        DEFAULT_LOG_WEIGHT_CAP,
    )
}

/// As [`reweighted_value`]; paths whose log-weight exceeds `log_cap` are
/// counted in `flags.overflows` (their weight is kept).
pub fn reweighted_value_with_cap(
    problem: &ControlProblem,
    lambda: &LambdaSpec,
    policy: &Policy,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
    log_cap: f64,
) -> Result<ReweightedEstimate> {
    if n_paths < 2 {
        return Err(invalid("n_paths", "at least two paths are required"));
    }
    let draws: Vec<(f64, f64, bool, usize)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let stream = RngStream::new(master_seed, i as u64);
            weighted_path(problem, lambda, policy, grid, stream)
                .and_then(|(sol, w)| {
                    let g = crate::sde::payoff(problem, &sol)?;
                    Ok((w.weight(), g, w.log_weight > log_cap, sol.clamp_violations))
                })
                .map_err(|e| Error::Path {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;

    let weights: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let weighted: Vec<f64> = draws.iter().map(|d| d.0 * d.1).collect();
    let flags = Flags {
        clamps: draws.iter().map(|d| d.3).sum(),
        overflows: draws.iter().filter(|d| d.2).count(),
    };
    let estimate = ValueEstimate::from_samples(&weighted, master_seed, flags)?;

    let n = n_paths as f64;
    let sum_w = pairwise_sum(&weights);
    let mean_w = sum_w / n;
    let ratio = pairwise_sum(&weighted) / sum_w;
    let resid: Vec<f64> = draws
        .iter()
        .map(|d| (d.0 * d.1 - ratio * d.0).powi(2))
        .collect();
    let sn_stderr = (pairwise_sum(&resid) / (n * (n - 1.0))).sqrt() / mean_w;
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    let ess = sum_w * sum_w / pairwise_sum(&sq);

    Ok(ReweightedEstimate {
        estimate,
        self_normalized_mean: ratio,
        self_normalized_stderr: sn_stderr,
        effective_sample_size: ess,
        mean_weight: mean_w,
    })
}

/// Freezes a closed-loop policy at the given fine knots: on `[t_i, t_{i+1})`
/// the action is the base action computed from the path up to `t_i`. Before
/// the first knot the base action at time 0 is held.
pub fn piecewise_constant_projection(
    policy: &Policy,
    knots: &[f64],
    grid: &TimeGrid,
) -> Result<Policy> {
    if policy.kind() != PolicyKind::ClosedLoop {
        return Err(Error::PolicyKind {
            expected: "closed-loop",
            got: policy.kind().name(),
        });
    }
    if knots.is_empty() {
        return Err(invalid("knots", "must not be empty"));
    }
    if !knots.windows(2).all(|w| w[0] < w[1]) {
        return Err(invalid("knots", "must be strictly increasing"));
    }
    let mut frozen = Vec::with_capacity(knots.len() + 1);
    if knots[0] > 0.0 {
        frozen.push((0.0, 0usize));
    }
    for &t in knots {
        let j = grid.knot_index(t).ok_or(Error::NotAKnot { time: t })?;
        frozen.push((t, j));
    }
    let base = policy.clone();
    let name = format!("{}@{}-knots", policy.name, knots.len());
    Ok(Policy::closed_loop(name, move |t, x| {
        let i = frozen.partition_point(|&(s, _)| s <= t).max(1) - 1;
        let (s, j) = frozen[i];
        let view = x.truncated(j.min(x.last_index()));
        let empty = PathView::from_raw(&[], &[], 1);
        base.action(
            s,
            &AugmentedView {
                brownian: empty,
                state: view,
                gamma: empty,
            },
        )
    }))
}

/// Mean and standard error of `|N^{projected}_T - N^{base}_T|^2` on common
/// driftless paths.
pub fn weight_l2_gap(
    problem: &ControlProblem,
    lambda: &LambdaSpec,
    base: &Policy,
    projected: &Policy,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
) -> Result<(f64, f64)> {
    require_state_policy(projected)?;
    let gaps: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let stream = RngStream::new(master_seed, i as u64);
            let (sol, w) = weighted_path(problem, lambda, base, grid, stream)?;
            let actions = actions_along(problem, projected, &sol);
            let lam = lambda_along(lambda, &sol.state, &actions)?;
            let wp = stochastic_exponential(&lam, &sol.brownian)?;
            Ok((wp.weight() - w.weight()).powi(2))
        })
        .collect::<Result<_>>()?;
    Ok(mean_and_stderr(&gaps))
}

/// Inverts the Euler recursion: `dB_j = sigma_j^{-1} (dX_j - b_j dt_j)`.
///
/// The coefficients must not depend on the action; they are evaluated at the
/// smallest action of `A`.
pub fn recover_brownian(problem: &ControlProblem, state: &SamplePath) -> Result<SamplePath> {
    let n = problem.state_dim();
    if problem.noise_dim != n {
        return Err(Error::Dimension {
            expected: n,
            got: problem.noise_dim,
            context: "recovery needs a square diffusion",
        });
    }
    if state.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: state.dim(),
            context: "state path",
        });
    }
    let grid = state.grid();
    let a = problem.actions.lower();
    let mut drift = vec![0.0; n];
    let mut sigma = vec![0.0; n * n];
    let mut out = vec![0.0; grid.len() * n];
    for j in 0..grid.steps() {
        let t = grid.fine_knots()[j];
        let view = state.view(j);
        (problem.drift)(t, &view, a, &mut drift);
        (problem.diffusion)(t, &view, a, &mut sigma);
        let dt = grid.dt(j);
        let rhs = DVector::from_iterator(
            n,
            (0..n).map(|i| state.at(j + 1)[i] - state.at(j)[i] - drift[i] * dt),
        );
        let m = DMatrix::from_row_slice(n, n, &sigma);
        let db = m
            .lu()
            .solve(&rhs)
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .ok_or(Error::SingularDiffusion { step: j, time: t })?;
        for i in 0..n {
            out[(j + 1) * n + i] = out[j * n + i] + db[i];
        }
    }
    SamplePath::new(grid.clone(), n, out)
}

/// Trailing-window realized covariance `sum dX dX^T / sum dt`, stored as
/// `n * n` row-major values per knot. Knot 0 has no increments and is 0.
pub fn estimate_quadratic_variation(x: &SamplePath, window: usize) -> Result<SamplePath> {
    if window == 0 {
        return Err(invalid("window", "must be at least one step"));
    }
    let grid = x.grid();
    let n = x.dim();
    let mut out = vec![0.0; grid.len() * n * n];
    for j in 1..grid.len() {
        let first = j.saturating_sub(window);
        let mut acc = vec![0.0; n * n];
        let mut elapsed = 0.0;
        for l in first..j {
            let (x0, x1) = (x.at(l), x.at(l + 1));
            for r in 0..n {
                for c in 0..n {
                    acc[r * n + c] += (x1[r] - x0[r]) * (x1[c] - x0[c]);
                }
            }
            elapsed += grid.dt(l);
        }
        let slot = &mut out[j * n * n..(j + 1) * n * n];
        for r in 0..n {
            for c in 0..n {
                slot[r * n + c] = 0.5 * (acc[r * n + c] + acc[c * n + r]) / elapsed;
            }
        }
    }
    SamplePath::new(grid.clone(), n * n, out)
}
