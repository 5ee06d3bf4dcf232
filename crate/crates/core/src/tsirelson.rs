//! Tsirelson's drift and the path functionals built on it.
//!
//! On `[t_k, t_{k+1})` the drift is the fractional part of the state's
//! increment quotient over the previous coarse interval:
//!
//! ```text
//! mu(t, x) = theta((x(t_k) - x(t_{k-1})) / (t_k - t_{k-1}))
//! ```
//!
//! The grid is truncated at `K` levels. On the stub `[0, t_{-K})` and on the
//! first level `[t_{-K}, t_{-K+1})`, where `t_{-K-1}` does not exist, the drift
//! is 0.
//!
//! Integrals of `|alpha - mu|` are taken step by step. Both integrands are
//! constant on every open Euler step, so each step contributes
//! `dt_j * |value on (t_j, t_{j+1})|`: the trapezoid rule applied with the
//! one-sided limits at the step ends. Sampling a backward difference quotient
//! exactly at a coarse knot would otherwise pick up the jump of `mu` there.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::mc::PolicyFamily;
use crate::paths::{increment_quotient, PathView, RngStream, SamplePath, TimeGrid};
use crate::sde::{simulate, ActionSet, ControlProblem, Policy, SimulatedSolution};

/// Default relaxed tolerance per unit horizon.
pub const DEFAULT_RELATIVE_TOLERANCE: f64 = 1e-3;

/// Fractional part `x - floor(x)`, always in `[0, 1)`.
pub fn theta(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// The drift `mu(t, x)` on a truncated Tsirelson grid.
#[derive(Debug, Clone)]
pub struct TsirelsonDrift {
    grid: TimeGrid,
}

impl TsirelsonDrift {
    pub fn new(grid: TimeGrid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Drift at arbitrary `t` in `[0, T)`; `x` must be visible up to `t`.
    pub fn mu(&self, t: f64, x: &PathView<'_>) -> Result<f64> {
        let horizon = self.grid.horizon();
        if !(0.0..horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                time: t,
                lo: 0.0,
                hi: horizon,
            });
        }
        let Some(k) = self.grid.level_of_time(t) else {
            return Ok(0.0);
        };
        let Some((lo, hi)) = self.quotient_knots(k) else {
            return Ok(0.0);
        };
        if hi >= x.len() {
            return Err(Error::TimeOutOfRange {
                time: t,
                lo: 0.0,
                hi: x.current_time(),
            });
        }
        Ok(self.quotient_theta(x, lo, hi))
    }

    /// Drift on the Euler step starting at fine knot `j`.
    pub fn mu_at_index(&self, j: usize, x: &PathView<'_>) -> f64 {
        match self
            .grid
            .level_of_index(j)
            .and_then(|k| self.quotient_knots(k))
        {
            Some((lo, hi)) => self.quotient_theta(x, lo, hi),
            None => 0.0,
        }
    }

    /// Fine indices of `t_{k-1}` and `t_k`, when both exist.
    fn quotient_knots(&self, k: i64) -> Option<(usize, usize)> {
        let lo = self.grid.coarse_fine_index(k - 1)?;
        let hi = self.grid.coarse_fine_index(k)?;
        Some((lo, hi))
    }

    fn quotient_theta(&self, x: &PathView<'_>, lo: usize, hi: usize) -> f64 {
        let knots = self.grid.fine_knots();
        theta((x.scalar(hi) - x.scalar(lo)) / (knots[hi] - knots[lo]))
    }

    /// `mu(t_j, x)` for every Euler step of a complete path.
    pub fn along(&self, x: &SamplePath) -> Vec<f64> {
        let view = x.full_view();
        (0..self.grid.steps())
            .map(|j| self.mu_at_index(j, &view))
            .collect()
    }
}

/// Window and tolerance of the relaxed membership test for `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedPayoffConfig {
    /// Backward window `h` of the derivative quotient.
    pub window: f64,
    /// L1 tolerance `eps`.
    pub tolerance: f64,
}

impl RelaxedPayoffConfig {
    pub fn new(grid: &TimeGrid, window: f64, tolerance: f64) -> Result<Self> {
        let cfg = Self { window, tolerance };
        cfg.validate(grid)?;
        Ok(cfg)
    }

    /// `h = dt`, `eps = T * 1e-3`.
    pub fn for_grid(grid: &TimeGrid) -> Self {
        Self {
            window: grid.euler_step(),
            tolerance: grid.horizon() * DEFAULT_RELATIVE_TOLERANCE,
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(invalid(
                "tolerance",
                "must be positive: the exact-zero set is degenerate under discretization",
            ));
        }
        if self.window.is_nan()
            || self.window < grid.euler_step() * (1.0 - 1e-12)
            || !self.window.is_finite()
        {
            return Err(invalid(
                "window",
                format!("must be at least one Euler step ({})", grid.euler_step()),
            ));
        }
        Ok(())
    }
}

fn drift_minus_noise(b: &SamplePath, x: &SamplePath, j: usize) -> f64 {
    x.scalar(j) - b.scalar(j)
}

/// Backward quotient of `X - B` ending at fine knot `j >= 1`, clamped to [0, 1].
fn alpha_star_index(b: &SamplePath, x: &SamplePath, j: usize, window: f64) -> f64 {
    let grid = x.grid();
    let t = grid.fine_knots()[j];
    // Slack so that `t - h` landing a rounding error below a knot still snaps to it.
    let slack = 1e-12 * grid.horizon();
    let start = grid
        .index_at_or_before((t - window + slack).max(0.0))
        .unwrap_or(0)
        .min(j - 1);
    let s = grid.fine_knots()[start];
    let q = (drift_minus_noise(b, x, j) - drift_minus_noise(b, x, start)) / (t - s);
    if q.is_nan() {
        0.0
    } else {
        q.clamp(0.0, 1.0)
    }
}

/// `0 v [((X - B)_t - (X - B)_{(t-h)+}) / h] ^ 1` with both ends snapped to
/// the last fine knot at or before them.
pub fn alpha_star(t: f64, b: &SamplePath, x: &SamplePath, window: f64) -> Result<f64> {
    let grid = x.grid();
    if b.grid() != grid {
        return Err(invalid("brownian", "B and X must share a grid"));
    }
    if window.is_nan() || window < grid.euler_step() * (1.0 - 1e-12) {
        return Err(invalid("window", "must be at least one Euler step"));
    }
    if !(t > 0.0 && t <= grid.horizon()) {
        return Err(Error::TimeOutOfRange {
            time: t,
            lo: 0.0,
            hi: grid.horizon(),
        });
    }
    match grid.index_at_or_before(t) {
        Some(j) if j >= 1 => Ok(alpha_star_index(b, x, j, window)),
        _ => Err(Error::TimeOutOfRange {
            time: t,
            lo: grid.fine_knots()[1],
            hi: grid.horizon(),
        }),
    }
}

/// `int_0^T |alpha*(t) - mu(t, X)| dt` on the fine grid.
pub fn relaxed_mismatch(
    solution: &SimulatedSolution,
    cfg: &RelaxedPayoffConfig,
    drift: &TsirelsonDrift,
) -> f64 {
    let grid = solution.grid();
    let view = solution.state.full_view();
    (0..grid.steps())
        .map(|j| {
            let star = alpha_star_index(&solution.brownian, &solution.state, j + 1, cfg.window);
            grid.dt(j) * (star - drift.mu_at_index(j, &view)).abs()
        })
        .sum()
}

/// Indicator of the relaxed set `D`: 1 iff the mismatch is below `eps`.
pub fn relaxed_g(
    solution: &SimulatedSolution,
    cfg: &RelaxedPayoffConfig,
    drift: &TsirelsonDrift,
) -> f64 {
    if relaxed_mismatch(solution, cfg, drift) < cfg.tolerance {
        1.0
    } else {
        0.0
    }
}

/// The controlled SDE `X = int alpha ds + B`, `A = [0, 1]`, with payoff `1_D`.
pub fn tsirelson_problem(grid: &TimeGrid, cfg: RelaxedPayoffConfig) -> ControlProblem {
    let drift = TsirelsonDrift::new(grid.clone());
    ControlProblem::scalar(
        0.0,
        grid.horizon(),
        ActionSet::unit(),
        |_, _, a| a,
        |_, _, _| 1.0,
        move |sol| relaxed_g(sol, &cfg, &drift),
    )
    .with_bound(1.0)
}

/// `alpha_t = mu(t, X)`.
pub fn closed_loop_tsirelson_policy(grid: &TimeGrid) -> Policy {
    let drift = TsirelsonDrift::new(grid.clone());
    Policy::closed_loop("tsirelson-mu", move |_, x| {
        drift.mu_at_index(x.last_index(), x)
    })
}

/// How the `E_k` tolerance depends on `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EkTolerance {
    /// `eps_k = eps * t_k / T`.
    Scaled,
    /// `eps_k = eps`.
    Fixed,
}

/// `int_0^{t_k} |alpha_t - mu(t, X)| dt`.
pub fn e_k_mismatch(solution: &SimulatedSolution, k: i64, drift: &TsirelsonDrift) -> Result<f64> {
    let grid = solution.grid();
    let levels = grid.levels() as i64;
    if !(-levels..=-1).contains(&k) {
        return Err(invalid(
            "k",
            format!("must lie in [-{levels}, -1], got {k}"),
        ));
    }
    let end = grid.coarse_fine_index(k).expect("k validated");
    let view = solution.state.full_view();
    Ok((0..end)
        .map(|j| grid.dt(j) * (solution.alpha.scalar(j) - drift.mu_at_index(j, &view)).abs())
        .sum())
}

/// Indicator of the event `E_k` under the relaxed tolerance.
pub fn e_k_indicator(
    solution: &SimulatedSolution,
    k: i64,
    eps: f64,
    mode: EkTolerance,
    drift: &TsirelsonDrift,
) -> Result<bool> {
    let mismatch = e_k_mismatch(solution, k, drift)?;
    let grid = solution.grid();
    let tol = match mode {
        EkTolerance::Scaled => eps * grid.coarse_knot(k).expect("k validated") / grid.horizon(),
        EkTolerance::Fixed => eps,
    };
    Ok(mismatch < tol)
}

/// Output of [`extend_alpha_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub alpha: SamplePath,
    pub state: SamplePath,
}

/// Keeps `alpha` on `[0, t_k)` and continues it on `[t_i, t_{i+1})`,
/// `i = k..=-1`, by
///
/// ```text
/// alpha_t = theta((B(t_i) - B(t_{i-1}) + int_{t_{i-1}}^{t_i} alpha ds) / (t_i - t_{i-1}))
/// ```
///
/// together with `X = int_0^t alpha ds + B_t`.
pub fn extend_alpha_k(
    brownian: &SamplePath,
    alpha_prefix: &SamplePath,
    k: i64,
) -> Result<Extension> {
    let grid = brownian.grid();
    let levels = grid.levels() as i64;
    if !(-levels + 1..=-1).contains(&k) {
        return Err(invalid(
            "k",
            format!("must lie in [-{}, -1], got {k}", levels - 1),
        ));
    }
    if alpha_prefix.grid() != grid || alpha_prefix.dim() != 1 || brownian.dim() != 1 {
        return Err(invalid(
            "alpha_prefix",
            "B and alpha must be scalar paths on one grid",
        ));
    }
    let start = grid.coarse_fine_index(k).expect("k validated");
    let mut alpha = vec![0.0; grid.len()];
    for (j, slot) in alpha.iter_mut().enumerate().take(start) {
        let a = alpha_prefix.scalar(j);
        if !(0.0..1.0).contains(&a) {
            return Err(invalid(
                "alpha_prefix",
                format!("value {a} at knot {j} outside [0, 1)"),
            ));
        }
        *slot = a;
    }

    let knots = grid.fine_knots();
    for i in k..=-1 {
        let lo = grid.coarse_fine_index(i - 1).expect("i - 1 >= -K");
        let mid = grid.coarse_fine_index(i).expect("i <= 0");
        let hi = grid.coarse_fine_index(i + 1).expect("i + 1 <= 0");
        let integral: f64 = (lo..mid).map(|j| alpha[j] * grid.dt(j)).sum();
        let q = (brownian.scalar(mid) - brownian.scalar(lo) + integral) / (knots[mid] - knots[lo]);
        let a = theta(q);
        alpha[mid..hi].fill(a);
    }
    let last = grid.steps();
    alpha[last] = alpha[last - 1];

    let mut state = vec![0.0; grid.len()];
    let mut running = 0.0;
    for j in 0..grid.len() {
        state[j] = running + brownian.scalar(j);
        if j < last {
            running += alpha[j] * grid.dt(j);
        }
    }
    Ok(Extension {
        alpha: SamplePath::new(grid.clone(), 1, alpha)?,
        state: SamplePath::new(grid.clone(), 1, state)?,
    })
}

/// `int_{t_k}^T |alpha^k - mu(t, X^k)| dt`.
pub fn recursion_residual(ext: &Extension, k: i64, drift: &TsirelsonDrift) -> Result<f64> {
    let grid = ext.alpha.grid();
    let start = grid
        .coarse_fine_index(k)
        .ok_or_else(|| invalid("k", format!("no coarse knot t_{k}")))?;
    let view = ext.state.full_view();
    Ok((start..grid.steps())
        .map(|j| grid.dt(j) * (ext.alpha.scalar(j) - drift.mu_at_index(j, &view)).abs())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    Agree,
    Disagree,
}

/// Builds `alpha^n` and `alpha^k` from the same driving `alpha` and compares
/// them on `[0, T]`: L1 distance of the controls and sup distance of the
/// states must both be within `eps`.
pub fn consistency_check_ank(
    brownian: &SamplePath,
    alpha: &SamplePath,
    n: i64,
    k: i64,
    eps: f64,
) -> Result<Agreement> {
    if n >= k {
        return Err(invalid("n", format!("need n < k, got n = {n}, k = {k}")));
    }
    let deep = extend_alpha_k(brownian, alpha, n)?;
    let shallow = extend_alpha_k(brownian, alpha, k)?;
    let grid = brownian.grid();
    let l1: f64 = (0..grid.steps())
        .map(|j| grid.dt(j) * (deep.alpha.scalar(j) - shallow.alpha.scalar(j)).abs())
        .sum();
    let sup = deep
        .state
        .values()
        .iter()
        .zip(shallow.state.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(if l1 <= eps && sup <= eps {
        Agreement::Agree
    } else {
        Agreement::Disagree
    })
}

/// `eta_k = theta((X(t_k) - X(t_{k-1})) / (t_k - t_{k-1}))` for the closed-loop
/// Tsirelson solution on each stream, ordered by stream index.
pub fn fractional_uniformity_samples(
    grid: &TimeGrid,
    streams: &[RngStream],
    k: i64,
) -> Result<Vec<f64>> {
    let levels = grid.levels() as i64;
    if !(-levels + 1..=-1).contains(&k) {
        return Err(invalid(
            "k",
            format!("must lie in [-{}, -1], got {k}", levels - 1),
        ));
    }
    let problem = tsirelson_problem(grid, RelaxedPayoffConfig::for_grid(grid)).with_payoff(|_| 0.0);
    let policy = closed_loop_tsirelson_policy(grid);
    let lo = grid.coarse_knot(k - 1).expect("k validated");
    let hi = grid.coarse_knot(k).expect("k validated");

    let mut ordered: Vec<RngStream> = streams.to_vec();
    ordered.sort_by_key(|s| s.stream_index);
    ordered
        .par_iter()
        .enumerate()
        .map(|(i, &stream)| {
            let sol = simulate(&problem, &policy, grid, stream).map_err(|e| Error::Path {
                index: i,
                source: Box::new(e),
            })?;
            Ok(theta(increment_quotient(&sol.state, lo, hi)?[0]))
        })
        .collect()
}

/// Constant actions `0, 0.1, ..., 1` and five fixed time schedules.
pub fn deterministic_open_loop_probes(horizon: f64) -> Vec<(String, Policy)> {
    type Schedule = (&'static str, fn(f64) -> f64);
    let mut members: Vec<(String, Policy)> = (0..=10)
        .map(|i| {
            let c = i as f64 / 10.0;
            (
                format!("const-{c:.1}"),
                Policy::open_loop(format!("const-{c:.1}"), move |_, _| c),
            )
        })
        .collect();

    let schedules: [Schedule; 5] = [
        ("ramp-up", |s| s),
        ("ramp-down", |s| 1.0 - s),
        ("sine", |s| {
            0.5 * (1.0 + (2.0 * std::f64::consts::PI * s).sin())
        }),
        ("step-half", |s| if s >= 0.5 { 1.0 } else { 0.0 }),
        ("quadratic", |s| s * s),
    ];
    for (name, f) in schedules {
        members.push((
            format!("time-{name}"),
            Policy::open_loop(format!("time-{name}"), move |t, _| f(t / horizon)),
        ));
    }
    members
}

/// Open-loop probe family: 11 constants, 5 deterministic schedules and 3
/// Brownian-feedback mimics of the Tsirelson drift.
pub fn open_loop_probe_family(grid: &TimeGrid) -> PolicyFamily {
    let mut members = deterministic_open_loop_probes(grid.horizon());

    // mu applied to B instead of X
    let drift = TsirelsonDrift::new(grid.clone());
    members.push((
        "mimic-mu-of-B".into(),
        Policy::open_loop("mimic-mu-of-B", move |_, b| {
            drift.mu_at_index(b.last_index(), b)
        }),
    ));
    // same, shifted by the mean 1/2 of a uniform control
    let drift = TsirelsonDrift::new(grid.clone());
    members.push((
        "mimic-mu-of-B-shifted".into(),
        Policy::open_loop("mimic-mu-of-B-shifted", move |_, b| {
            let j = b.last_index();
            if drift
                .grid()
                .level_of_index(j)
                .is_some_and(|k| k > -(drift.grid().levels() as i64))
            {
                theta(drift.mu_at_index(j, b) + 0.5)
            } else {
                0.0
            }
        }),
    ));
    // fractional part of the last fine-step quotient of B
    members.push((
        "mimic-last-step".into(),
        Policy::open_loop("mimic-last-step", |_, b| {
            let j = b.last_index();
            if j == 0 {
                return 0.0;
            }
            let knots = b.knots();
            theta((b.scalar(j) - b.scalar(j - 1)) / (knots[j] - knots[j - 1]))
        }),
    ));

    PolicyFamily::new("tsirelson-open-loop-probe", members).expect("all members are open-loop")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::simulate_with_brownian;
    use proptest::prelude::*;

    fn grid() -> TimeGrid {
        TimeGrid::tsirelson(1.0, 8, 0.5, 4).unwrap()
    }

    #[test]
    fn theta_examples() {
        assert!((theta(1.7) - 0.7).abs() < 1e-12);
        assert!((theta(-0.3) - 0.7).abs() < 1e-12);
        assert_eq!(theta(2.0), 0.0);
        assert!(theta(-1e-18) < 1.0);
    }

    proptest! {
        #[test]
        fn theta_is_one_periodic(x in -50.0f64..50.0, m in -3i32..=3) {
            let a = theta(x);
            let b = theta(x + m as f64);
            prop_assert!((0.0..1.0).contains(&a));
            let d = (a - b).abs();
            prop_assert!(d < 1e-9 || (1.0 - d) < 1e-9);
        }
    }

    #[test]
    fn mu_examples() {
        let g = grid();
        let d = TsirelsonDrift::new(g.clone());
        let lin = SamplePath::from_fn(g.clone(), |t| 2.5 * t);
        let view = lin.full_view();
        assert!((d.mu(0.6, &view).unwrap() - 0.5).abs() < 1e-12);
        let flat = SamplePath::from_fn(g.clone(), |_| 4.0);
        assert_eq!(d.mu(0.6, &flat.full_view()).unwrap(), 0.0);
        let stub = g.coarse_knots()[0] / 2.0;
        assert_eq!(d.mu(stub, &view).unwrap(), 0.0);
        // first level has no t_{k-1}
        assert_eq!(d.mu(g.coarse_knots()[0], &view).unwrap(), 0.0);
        assert!(d.mu(1.0, &view).is_err());
    }

    #[test]
    fn mu_ignores_the_path_after_t_k() {
        let g = grid();
        let d = TsirelsonDrift::new(g.clone());
        let base = SamplePath::from_fn(g.clone(), |t| (7.0 * t).sin() * 3.0);
        let tk = 0.5;
        let changed = SamplePath::from_fn(g.clone(), |t| {
            if t > tk {
                100.0 * t
            } else {
                (7.0 * t).sin() * 3.0
            }
        });
        for (j, &t) in g.fine_knots().iter().enumerate() {
            if (tk..1.0).contains(&t) {
                assert_eq!(
                    d.mu_at_index(j, &base.full_view()),
                    d.mu_at_index(j, &changed.full_view())
                );
                assert_eq!(
                    d.mu(t, &base.full_view()).unwrap(),
                    d.mu_at_index(j, &base.full_view())
                );
            }
        }
    }

    fn zero_path(g: &TimeGrid) -> SamplePath {
        SamplePath::zeros(g.clone(), 1)
    }

    #[test]
    fn alpha_star_examples() {
        let g = grid();
        let h = g.euler_step();
        let b = SamplePath::from_fn(g.clone(), |t| (5.0 * t).cos());
        let same = b.clone();
        let slope1 = SamplePath::from_fn(g.clone(), |t| (5.0 * t).cos() + t);
        let slope3 = SamplePath::from_fn(g.clone(), |t| (5.0 * t).cos() + 3.0 * t);
        for &t in &g.fine_knots()[1..] {
            assert_eq!(alpha_star(t, &b, &same, h).unwrap(), 0.0);
            assert!((alpha_star(t, &b, &slope1, h).unwrap() - 1.0).abs() < 1e-6);
            assert_eq!(alpha_star(t, &b, &slope3, h).unwrap(), 1.0);
        }
        assert!(alpha_star(0.0, &b, &same, h).is_err());
        assert!(alpha_star(0.5, &b, &same, h / 4.0).is_err());
    }

    #[test]
    fn alpha_star_recovers_piecewise_constant_controls() {
        let g = TimeGrid::uniform(1.0, 40).unwrap();
        let h = 4.0 * g.euler_step();
        let p = ControlProblem::scalar(
            0.0,
            1.0,
            ActionSet::unit(),
            |_, _, a| a,
            |_, _, _| 1.0,
            |_| 0.0,
        );
        // constant on windows of 8 steps
        let pol = Policy::open_loop("blocks", |t, _| ((t * 5.0).floor() * 0.2).min(1.0));
        let sol = simulate(&p, &pol, &g, RngStream::new(3, 3)).unwrap();
        for j in 4..g.len() {
            let a_prev = sol.alpha.scalar(j - 1);
            if (j - 4..j).all(|i| sol.alpha.scalar(i) == a_prev) {
                let a = alpha_star(g.fine_knots()[j], &sol.brownian, &sol.state, h).unwrap();
                assert!((a - sol.alpha.scalar(j - 1)).abs() < 1e-9, "j = {j}");
            }
        }
    }

    #[test]
    fn closed_loop_solution_is_in_d() {
        let g = grid();
        let cfg = RelaxedPayoffConfig::for_grid(&g);
        let drift = TsirelsonDrift::new(g.clone());
        let problem = tsirelson_problem(&g, cfg);
        let policy = closed_loop_tsirelson_policy(&g);
        for i in 0..50 {
            let sol = simulate(&problem, &policy, &g, RngStream::new(1, i)).unwrap();
            let view = sol.state.full_view();
            for j in 0..g.steps() {
                assert_eq!(sol.alpha.scalar(j), drift.mu_at_index(j, &view));
                assert!((0.0..1.0).contains(&sol.alpha.scalar(j)));
                if g.level_of_index(j).is_none() {
                    assert_eq!(sol.alpha.scalar(j), 0.0);
                }
            }
            assert!(relaxed_mismatch(&sol, &cfg, &drift) < 1e-8);
            assert_eq!(relaxed_g(&sol, &cfg, &drift), 1.0);
            assert_eq!(crate::sde::payoff(&problem, &sol).unwrap(), 1.0);
        }
    }

    #[test]
    fn zero_control_misses_d() {
        let g = grid();
        let cfg = RelaxedPayoffConfig::for_grid(&g);
        let drift = TsirelsonDrift::new(g.clone());
        let problem = tsirelson_problem(&g, cfg);
        let zero = Policy::open_loop("zero", |_, _| 0.0);
        let hits: f64 = (0..500)
            .map(|i| {
                let sol = simulate(&problem, &zero, &g, RngStream::new(2, i)).unwrap();
                relaxed_g(&sol, &cfg, &drift)
            })
            .sum();
        assert_eq!(hits, 0.0);
    }

    #[test]
    fn self_consistent_deterministic_path_is_in_d() {
        let g = grid();
        let cfg = RelaxedPayoffConfig::for_grid(&g);
        let drift = TsirelsonDrift::new(g.clone());
        // mu vanishes before t_{-K+1}, so extending a zero prefix from there
        // yields a path whose drift is mu of itself everywhere
        let b = SamplePath::from_fn(g.clone(), |t| (9.0 * t).sin());
        let ext = extend_alpha_k(&b, &zero_path(&g), -(g.levels() as i64) + 1).unwrap();
        let sol = SimulatedSolution {
            brownian: b,
            state: ext.state.clone(),
            alpha: ext.alpha.clone(),
            gamma: ext.state.clone(),
            clamp_violations: 0,
        };
        assert!(ext.alpha.values().iter().any(|&a| a > 0.0));
        assert!(relaxed_mismatch(&sol, &cfg, &drift) < 1e-9);
        assert_eq!(relaxed_g(&sol, &cfg, &drift), 1.0);
    }

    #[test]
    fn e_k_examples() {
        let g = grid();
        let levels = g.levels() as i64;
        let eps = 1e-3;
        let drift = TsirelsonDrift::new(g.clone());
        let problem = tsirelson_problem(&g, RelaxedPayoffConfig::for_grid(&g));
        let closed = simulate(
            &problem,
            &closed_loop_tsirelson_policy(&g),
            &g,
            RngStream::new(4, 0),
        )
        .unwrap();
        for k in -levels..=-1 {
            assert!(e_k_indicator(&closed, k, eps, EkTolerance::Scaled, &drift).unwrap());
        }
        let zero = Policy::open_loop("zero", |_, _| 0.0);
        let mut hits = 0;
        for i in 0..200 {
            let sol = simulate(&problem, &zero, &g, RngStream::new(4, i)).unwrap();
            hits += e_k_indicator(&sol, -1, eps, EkTolerance::Scaled, &drift).unwrap() as usize;
            // only the stub precedes t_{-K}
            assert!(e_k_indicator(&sol, -levels, eps, EkTolerance::Fixed, &drift).unwrap());
            assert!(e_k_indicator(&sol, -levels, eps, EkTolerance::Scaled, &drift).unwrap());
        }
        assert_eq!(hits, 0);
        assert!(e_k_indicator(&closed, 0, eps, EkTolerance::Scaled, &drift).is_err());
        assert!(e_k_indicator(&closed, -levels - 1, eps, EkTolerance::Scaled, &drift).is_err());
    }

    #[test]
    fn extension_matches_mu_of_its_state() {
        let g = grid();
        let drift = TsirelsonDrift::new(g.clone());
        let problem = tsirelson_problem(&g, RelaxedPayoffConfig::for_grid(&g));
        let policy = closed_loop_tsirelson_policy(&g);
        for i in 0..20 {
            let sol = simulate(&problem, &policy, &g, RngStream::new(6, i)).unwrap();
            for k in -(g.levels() as i64) + 1..=-1 {
                let ext = extend_alpha_k(&sol.brownian, &sol.alpha, k).unwrap();
                assert!(recursion_residual(&ext, k, &drift).unwrap() < 1e-9);
                // idempotent on a mu-consistent control
                for j in 0..g.steps() {
                    assert!((ext.alpha.scalar(j) - sol.alpha.scalar(j)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn flat_noise_and_zero_prefix_stay_zero() {
        let g = grid();
        let ext = extend_alpha_k(&zero_path(&g), &zero_path(&g), -3).unwrap();
        assert!(ext.alpha.values().iter().all(|&a| a == 0.0));
        assert!(ext.state.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn extension_depends_only_on_the_prefix() {
        let g = grid();
        let b = crate::paths::sample_brownian(&g, RngStream::new(9, 9), 1).unwrap();
        let k = -4;
        let cut = g.coarse_fine_index(k).unwrap();
        let p1 = SamplePath::from_fn(g.clone(), |t| theta(3.0 * t));
        let mut v = p1.values().to_vec();
        for x in &mut v[cut..] {
            *x = 0.25;
        }
        let p2 = SamplePath::new(g.clone(), 1, v).unwrap();
        assert_eq!(
            extend_alpha_k(&b, &p1, k).unwrap(),
            extend_alpha_k(&b, &p2, k).unwrap()
        );

        let mut bad = p1.values().to_vec();
        bad[0] = 1.0;
        let bad = SamplePath::new(g.clone(), 1, bad).unwrap();
        assert!(extend_alpha_k(&b, &bad, k).is_err());
        assert!(extend_alpha_k(&b, &p1, 0).is_err());
        assert!(extend_alpha_k(&b, &p1, -(g.levels() as i64)).is_err());
    }

    #[test]
    fn consistency_on_closed_loop_paths() {
        let g = grid();
        let problem = tsirelson_problem(&g, RelaxedPayoffConfig::for_grid(&g));
        let sol = simulate(
            &problem,
            &closed_loop_tsirelson_policy(&g),
            &g,
            RngStream::new(12, 1),
        )
        .unwrap();
        for k in -6..=-1 {
            for n in -7..k {
                assert_eq!(
                    consistency_check_ank(&sol.brownian, &sol.alpha, n, k, 1e-6).unwrap(),
                    Agreement::Agree
                );
            }
        }
        assert!(consistency_check_ank(&sol.brownian, &sol.alpha, -2, -2, 1e-6).is_err());
        // not on E_k: any answer is allowed, but the call succeeds
        let zero = simulate(
            &problem,
            &Policy::open_loop("z", |_, _| 0.0),
            &g,
            RngStream::new(12, 1),
        )
        .unwrap();
        assert!(consistency_check_ank(&zero.brownian, &zero.alpha, -5, -2, 1e-6).is_ok());
    }

    #[test]
    fn recovered_closed_loop_equals_resimulation() {
        // The Euler solution is a function of B: driving again with the same B
        // gives the same X.
        let g = grid();
        let problem = tsirelson_problem(&g, RelaxedPayoffConfig::for_grid(&g));
        let policy = closed_loop_tsirelson_policy(&g);
        let sol = simulate(&problem, &policy, &g, RngStream::new(13, 0)).unwrap();
        let again = simulate_with_brownian(&problem, &policy, &sol.brownian).unwrap();
        for j in 0..g.len() {
            assert!((again.state.scalar(j) - sol.state.scalar(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn uniformity_samples_range_and_mean() {
        let g = TimeGrid::tsirelson(1.0, 10, 0.5, 2).unwrap();
        let n = 10_000;
        let xs = fractional_uniformity_samples(&g, &RngStream::family(77, n), -2).unwrap();
        assert_eq!(xs.len(), n);
        assert!(xs.iter().all(|x| (0.0..1.0).contains(x)));
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!(
            (mean - 0.5).abs() < 3.0 / (12.0 * n as f64).sqrt(),
            "mean = {mean}"
        );
        assert!(fractional_uniformity_samples(&g, &RngStream::family(77, 3), 0).is_err());
    }

    #[test]
    fn probe_family_shape() {
        let g = grid();
        let fam = open_loop_probe_family(&g);
        assert_eq!(fam.len(), 19);
        assert_eq!(fam.kind(), crate::sde::PolicyKind::OpenLoop);
    }

    #[test]
    fn relaxed_config_validation() {
        let g = grid();
        assert!(RelaxedPayoffConfig::new(&g, g.euler_step(), 0.0).is_err());
        assert!(RelaxedPayoffConfig::new(&g, g.euler_step() / 2.0, 1e-3).is_err());
        assert!(RelaxedPayoffConfig::new(&g, g.euler_step(), 1e-3).is_ok());
    }
}
