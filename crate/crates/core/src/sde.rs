//! Euler–Maruyama simulation of controlled path-dependent SDEs
//!
//! ```text
//! X_{j+1} = X_j + b(t_j, X_[0,t_j], a_j) dt_j + sigma(t_j, X_[0,t_j], a_j) dB_j
//! ```
//!
//! Coefficients and policies only ever receive a [`PathView`] truncated at the
//! current knot. Actions are scalar (`A` is a subset of the real line).

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::paths::{sample_increments, PathView, RngStream, SamplePath, TimeGrid};

/// Drift: writes `b(t, x_[0,t], a)` (length `n`) into the output slice.
pub type DriftFn = Arc<dyn Fn(f64, &PathView<'_>, f64, &mut [f64]) + Send + Sync>;
/// Diffusion: writes the `n x d` matrix `sigma(t, x_[0,t], a)` row-major.
pub type DiffusionFn = Arc<dyn Fn(f64, &PathView<'_>, f64, &mut [f64]) + Send + Sync>;
/// Terminal payoff evaluated on a complete solution.
pub type PayoffFn = Arc<dyn Fn(&SimulatedSolution) -> f64 + Send + Sync>;

/// Admissible actions.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSet {
    Interval { lo: f64, hi: f64 },
    Finite(Vec<f64>),
}

impl ActionSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::Interval { lo, hi }
    }

    pub fn unit() -> Self {
        Self::Interval { lo: 0.0, hi: 1.0 }
    }

    pub fn contains(&self, a: f64) -> bool {
        match self {
            Self::Interval { lo, hi } => *lo <= a && a <= *hi,
            Self::Finite(points) => points.contains(&a),
        }
    }

    /// Projects `a` onto the set; the flag is `true` when `a` was outside.
    pub fn clamp(&self, a: f64) -> (f64, bool) {
        if self.contains(a) {
            return (a, false);
        }
        let projected = match self {
            Self::Interval { lo, hi } => {
                if a.is_nan() {
                    *lo
                } else {
                    a.clamp(*lo, *hi)
                }
            }
            Self::Finite(points) => points
                .iter()
                .copied()
                .min_by(|x, y| (x - a).abs().total_cmp(&(y - a).abs()))
                .unwrap_or(a),
        };
        (projected, true)
    }

    /// Finite sample used wherever a supremum over `A` is taken.
    pub fn sample(&self, resolution: usize) -> Vec<f64> {
        match self {
            Self::Interval { lo, hi } => {
                if resolution <= 1 || lo == hi {
                    return vec![*lo];
                }
                (0..resolution)
                    .map(|i| {
                        if i + 1 == resolution {
                            *hi
                        } else {
                            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
                        }
                    })
                    .collect()
            }
            Self::Finite(points) => points.clone(),
        }
    }

    /// Smallest element, used as the nominal action for action-free coefficients.
    pub fn lower(&self) -> f64 {
        match self {
            Self::Interval { lo, .. } => *lo,
            Self::Finite(points) => points.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Coefficients, payoff, action set, horizon and initial state.
#[derive(Clone)]
pub struct ControlProblem {
    pub x0: Vec<f64>,
    pub noise_dim: usize,
    pub horizon: f64,
    pub actions: ActionSet,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub payoff: PayoffFn,
    /// Bound checked against every `|b_i|` and `|sigma_ij|` the engine evaluates.
    pub coefficient_bound: f64,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("x0", &self.x0)
            .field("noise_dim", &self.noise_dim)
            .field("horizon", &self.horizon)
            .field("actions", &self.actions)
            .field("coefficient_bound", &self.coefficient_bound)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    pub fn new(
        x0: Vec<f64>,
        noise_dim: usize,
        horizon: f64,
        actions: ActionSet,
        drift: DriftFn,
        diffusion: DiffusionFn,
        payoff: PayoffFn,
    ) -> Self {
        Self {
            x0,
            noise_dim,
            horizon,
            actions,
            drift,
            diffusion,
            payoff,
            coefficient_bound: f64::INFINITY,
        }
    }

    /// One-dimensional state driven by one-dimensional noise.
    pub fn scalar(
        x0: f64,
        horizon: f64,
        actions: ActionSet,
        drift: impl Fn(f64, &PathView<'_>, f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64, &PathView<'_>, f64) -> f64 + Send + Sync + 'static,
        payoff: impl Fn(&SimulatedSolution) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            vec![x0],
            1,
            horizon,
            actions,
            Arc::new(move |t, x, a, out| out[0] = drift(t, x, a)),
            Arc::new(move |t, x, a, out| out[0] = diffusion(t, x, a)),
            Arc::new(payoff),
        )
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.coefficient_bound = bound;
        self
    }

    pub fn with_payoff(
        mut self,
        payoff: impl Fn(&SimulatedSolution) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.payoff = Arc::new(payoff);
        self
    }

    pub fn with_drift(mut self, drift: DriftFn) -> Self {
        self.drift = drift;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }
}

/// Which filtration a policy reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    OpenLoop,
    ClosedLoop,
    Feedback,
    Augmented,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::OpenLoop => "open-loop",
            Self::ClosedLoop => "closed-loop",
            Self::Feedback => "feedback",
            Self::Augmented => "augmented",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The `(B, X, Gamma)` paths up to the current knot.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedView<'a> {
    pub brownian: PathView<'a>,
    pub state: PathView<'a>,
    pub gamma: PathView<'a>,
}

pub type PathLaw = Arc<dyn Fn(f64, &PathView<'_>) -> f64 + Send + Sync>;
pub type FeedbackLaw = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type AugmentedLaw = Arc<dyn Fn(f64, &AugmentedView<'_>) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PolicyLaw {
    /// Reads the Brownian path.
    OpenLoop(PathLaw),
    /// Reads the state path.
    ClosedLoop(PathLaw),
    /// Reads the current state only.
    Feedback(FeedbackLaw),
    Augmented(AugmentedLaw),
}

/// A named control law. Laws must be re-entrant: they are shared across threads.
#[derive(Clone)]
pub struct Policy {
    pub name: String,
    pub law: PolicyLaw,
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Policy")
            .field("name", &self.name)
            .field("kind", &self.kind())
            .finish()
    }
}

impl Policy {
    pub fn open_loop(
        name: impl Into<String>,
        law: impl Fn(f64, &PathView<'_>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            law: PolicyLaw::OpenLoop(Arc::new(law)),
        }
    }

    pub fn closed_loop(
        name: impl Into<String>,
        law: impl Fn(f64, &PathView<'_>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            law: PolicyLaw::ClosedLoop(Arc::new(law)),
        }
    }

    pub fn feedback(
        name: impl Into<String>,
        law: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            law: PolicyLaw::Feedback(Arc::new(law)),
        }
    }

    pub fn augmented(
        name: impl Into<String>,
        law: impl Fn(f64, &AugmentedView<'_>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            law: PolicyLaw::Augmented(Arc::new(law)),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self.law {
            PolicyLaw::OpenLoop(_) => PolicyKind::OpenLoop,
            PolicyLaw::ClosedLoop(_) => PolicyKind::ClosedLoop,
            PolicyLaw::Feedback(_) => PolicyKind::Feedback,
            PolicyLaw::Augmented(_) => PolicyKind::Augmented,
        }
    }

    pub fn action(&self, t: f64, view: &AugmentedView<'_>) -> f64 {
        match &self.law {
            PolicyLaw::OpenLoop(f) => f(t, &view.brownian),
            PolicyLaw::ClosedLoop(f) => f(t, &view.state),
            PolicyLaw::Feedback(f) => f(t, view.state.current()),
            PolicyLaw::Augmented(f) => f(t, view),
        }
    }
}

/// One simulated path of `(B, X, alpha, Gamma)`.
///
/// `alpha` at knot `j` is the action held on `[t_j, t_{j+1})`; the entry at
/// `T` repeats the last action.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSolution {
    pub brownian: SamplePath,
    pub state: SamplePath,
    pub alpha: SamplePath,
    pub gamma: SamplePath,
    pub clamp_violations: usize,
}

impl SimulatedSolution {
    pub fn grid(&self) -> &TimeGrid {
        self.state.grid()
    }

    /// Stacked `(B, X, Gamma)` path of dimension `d + n + 1`.
    pub fn augmented_state(&self) -> SamplePath {
        let d = self.brownian.dim();
        let n = self.state.dim();
        let dim = d + n + 1;
        let mut values = Vec::with_capacity(self.state.len() * dim);
        for j in 0..self.state.len() {
            values.extend_from_slice(self.brownian.at(j));
            values.extend_from_slice(self.state.at(j));
            values.push(self.gamma.scalar(j));
        }
        SamplePath::new(self.grid().clone(), dim, values).expect("consistent dimensions")
    }

    /// The pair `(B, X)` of dimension `d + n`.
    pub fn pair_state(&self) -> SamplePath {
        let d = self.brownian.dim();
        let n = self.state.dim();
        let mut values = Vec::with_capacity(self.state.len() * (d + n));
        for j in 0..self.state.len() {
            values.extend_from_slice(self.brownian.at(j));
            values.extend_from_slice(self.state.at(j));
        }
        SamplePath::new(self.grid().clone(), d + n, values).expect("consistent dimensions")
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state.at(self.state.len() - 1)
    }
}

/// Simulates under any policy kind with Brownian noise from `stream`.
pub fn simulate(
    problem: &ControlProblem,
    policy: &Policy,
    grid: &TimeGrid,
    stream: RngStream,
) -> Result<SimulatedSolution> {
    check_problem(problem, grid)?;
    let increments = sample_increments(grid, stream, problem.noise_dim);
    run(problem, policy, grid, &increments)
}

/// As [`simulate`], restricted to policies that read the augmented state.
pub fn simulate_augmented(
    problem: &ControlProblem,
    policy: &Policy,
    grid: &TimeGrid,
    stream: RngStream,
) -> Result<SimulatedSolution> {
    if policy.kind() != PolicyKind::Augmented {
        return Err(Error::PolicyKind {
            expected: "augmented",
            got: policy.kind().name(),
        });
    }
    simulate(problem, policy, grid, stream)
}

/// Simulates driven by a given Brownian path; increments are its differences.
pub fn simulate_with_brownian(
    problem: &ControlProblem,
    policy: &Policy,
    brownian: &SamplePath,
) -> Result<SimulatedSolution> {
    let grid = brownian.grid().clone();
    check_problem(problem, &grid)?;
    if brownian.dim() != problem.noise_dim {
        return Err(Error::Dimension {
            expected: problem.noise_dim,
            got: brownian.dim(),
            context: "driving Brownian path",
        });
    }
    let d = problem.noise_dim;
    let mut increments = Vec::with_capacity(grid.steps() * d);
    for j in 0..grid.steps() {
        for i in 0..d {
            increments.push(brownian.at(j + 1)[i] - brownian.at(j)[i]);
        }
    }
    let mut sol = run(problem, policy, &grid, &increments)?;
    sol.brownian = brownian.clone();
    Ok(sol)
}

fn check_problem(problem: &ControlProblem, grid: &TimeGrid) -> Result<()> {
    if problem.x0.is_empty() {
        return Err(invalid("x0", "state dimension must be positive"));
    }
    if problem.noise_dim == 0 {
        return Err(invalid("noise_dim", "must be positive"));
    }
    if problem.horizon != grid.horizon() {
        return Err(invalid(
            "horizon",
            format!(
                "problem horizon {} differs from grid horizon {}",
                problem.horizon,
                grid.horizon()
            ),
        ));
    }
    Ok(())
}

fn check_coefficients(what: &'static str, values: &[f64], bound: f64, step: usize) -> Result<()> {
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite { what, step });
        }
        if v.abs() > bound {
            return Err(Error::CoefficientBound {
                what,
                value: v.abs(),
                bound,
                step,
            });
        }
    }
    Ok(())
}

fn run(
    problem: &ControlProblem,
    policy: &Policy,
    grid: &TimeGrid,
    increments: &[f64],
) -> Result<SimulatedSolution> {
    let n = problem.state_dim();
    let d = problem.noise_dim;
    let knots = grid.fine_knots();
    let steps = grid.steps();

    let mut x = vec![0.0; grid.len() * n];
    x[..n].copy_from_slice(&problem.x0);
    let mut b = vec![0.0; grid.len() * d];
    let mut gamma = vec![0.0; grid.len()];
    let mut alpha = vec![0.0; grid.len()];
    let mut drift = vec![0.0; n];
    let mut diffusion = vec![0.0; n * d];
    let mut clamps = 0usize;

    for j in 0..steps {
        let t = knots[j];
        let dt = knots[j + 1] - t;
        let (x_done, x_next) = x.split_at_mut((j + 1) * n);
        let (b_done, b_next) = b.split_at_mut((j + 1) * d);
        let (g_done, g_next) = gamma.split_at_mut(j + 1);
        let views = AugmentedView {
            brownian: PathView::from_raw(knots, b_done, d),
            state: PathView::from_raw(knots, x_done, n),
            gamma: PathView::from_raw(knots, g_done, 1),
        };

        let raw = policy.action(t, &views);
        if !raw.is_finite() {
            return Err(Error::NonFinite {
                what: "policy action",
                step: j,
            });
        }
        let (a, clamped) = problem.actions.clamp(raw);
        clamps += clamped as usize;
        alpha[j] = a;

        (problem.drift)(t, &views.state, a, &mut drift);
        check_coefficients("drift", &drift, problem.coefficient_bound, j)?;
        (problem.diffusion)(t, &views.state, a, &mut diffusion);
        check_coefficients("diffusion", &diffusion, problem.coefficient_bound, j)?;

        let db = &increments[j * d..(j + 1) * d];
        let xj = &x_done[j * n..];
        for i in 0..n {
            let mut noise = 0.0;
            for (s, dbk) in diffusion[i * d..(i + 1) * d].iter().zip(db) {
                noise += s * dbk;
            }
            x_next[i] = xj[i] + drift[i] * dt + noise;
        }
        for (k, dbk) in db.iter().enumerate() {
            b_next[k] = b_done[j * d + k] + dbk;
        }
        g_next[0] = g_done[j] + a * dt;
    }
    alpha[steps] = if steps > 0 { alpha[steps - 1] } else { 0.0 };

    Ok(SimulatedSolution {
        brownian: SamplePath::new(grid.clone(), d, b)?,
        state: SamplePath::new(grid.clone(), n, x)?,
        alpha: SamplePath::new(grid.clone(), 1, alpha)?,
        gamma: SamplePath::new(grid.clone(), 1, gamma)?,
        clamp_violations: clamps,
    })
}

/// Single-path payoff `g` of a complete solution.
pub fn payoff(problem: &ControlProblem, solution: &SimulatedSolution) -> Result<f64> {
    let v = (problem.payoff)(solution);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: "payoff",
            step: solution.grid().steps(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::sample_brownian;

    fn grid() -> TimeGrid {
        TimeGrid::tsirelson(1.0, 6, 0.5, 3).unwrap()
    }

    fn terminal(sol: &SimulatedSolution) -> f64 {
        sol.terminal_state()[0]
    }

    fn drifted(x0: f64) -> ControlProblem {
        ControlProblem::scalar(
            x0,
            1.0,
            ActionSet::unit(),
            |_, _, a| a,
            |_, _, _| 1.0,
            terminal,
        )
    }

    #[test]
    fn pure_noise_reproduces_brownian() {
        let g = grid();
        let p = ControlProblem::scalar(
            0.0,
            1.0,
            ActionSet::unit(),
            |_, _, _| 0.0,
            |_, _, _| 1.0,
            terminal,
        );
        let pol = Policy::closed_loop("x", |_, x| x.current()[0].abs().min(1.0));
        let sol = simulate(&p, &pol, &g, RngStream::new(1, 2)).unwrap();
        assert_eq!(sol.state.values(), sol.brownian.values());
        assert_eq!(
            sol.brownian,
            sample_brownian(&g, RngStream::new(1, 2), 1).unwrap()
        );

        let shifted = ControlProblem { x0: vec![0.3], ..p };
        let sol = simulate(&shifted, &pol, &g, RngStream::new(1, 2)).unwrap();
        for j in 0..g.len() {
            assert!((sol.state.scalar(j) - 0.3 - sol.brownian.scalar(j)).abs() < 1e-14);
        }
    }

    #[test]
    fn deterministic_unit_drift() {
        let g = grid();
        let p = ControlProblem::scalar(
            0.5,
            1.0,
            ActionSet::unit(),
            |_, _, a| a,
            |_, _, _| 0.0,
            terminal,
        );
        let pol = Policy::open_loop("one", |_, _| 1.0);
        let sol = simulate(&p, &pol, &g, RngStream::new(0, 0)).unwrap();
        assert!((terminal(&sol) - 1.5).abs() < 1e-14);
        assert_eq!(payoff(&p, &sol).unwrap(), terminal(&sol));
    }

    #[test]
    fn mean_of_unit_drift() {
        let g = grid();
        let p = drifted(0.0);
        let pol = Policy::open_loop("one", |_, _| 1.0);
        let n = 100_000u64;
        let sum: f64 = (0..n)
            .map(|i| terminal(&simulate(&p, &pol, &g, RngStream::new(5, i)).unwrap()))
            .sum();
        let mean = sum / n as f64;
        assert!(
            (mean - 1.0).abs() < 3.0 * (1.0 / n as f64).sqrt(),
            "mean = {mean}"
        );
    }

    #[test]
    fn euler_recursion_and_gamma() {
        let g = grid();
        let p = ControlProblem::scalar(
            0.2,
            1.0,
            ActionSet::unit(),
            |t, x, a| a * x.current()[0].sin() + t,
            |_, x, a| 1.0 + 0.5 * (x.current()[0] * a).cos(),
            terminal,
        );
        let pol = Policy::closed_loop("sq", |_, x| x.current()[0].powi(2));
        let sol = simulate(&p, &pol, &g, RngStream::new(3, 9)).unwrap();
        for j in 0..g.steps() {
            let t = g.fine_knots()[j];
            let dt = g.dt(j);
            let xj = sol.state.scalar(j);
            let a = sol.alpha.scalar(j);
            let db = sol.brownian.scalar(j + 1) - sol.brownian.scalar(j);
            let expect = xj + (a * xj.sin() + t) * dt + (1.0 + 0.5 * (xj * a).cos()) * db;
            assert!((sol.state.scalar(j + 1) - expect).abs() < 1e-12);
            assert_eq!(sol.gamma.scalar(j + 1), sol.gamma.scalar(j) + a * dt);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn clamps_are_counted() {
        let g = grid();
        let p = drifted(0.0);
        let pol = Policy::open_loop("two", |_, _| 2.0);
        let sol = simulate(&p, &pol, &g, RngStream::new(0, 0)).unwrap();
        assert_eq!(sol.clamp_violations, g.steps());
        assert!(sol.alpha.values().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn non_finite_and_bound_violations_abort() {
        let g = grid();
        let p = ControlProblem::scalar(
            0.0,
            1.0,
            ActionSet::unit(),
            |t, _, _| if t > 0.5 { f64::NAN } else { 0.0 },
            |_, _, _| 1.0,
            terminal,
        );
        let pol = Policy::open_loop("zero", |_, _| 0.0);
        let err = simulate(&p, &pol, &g, RngStream::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { what: "drift", .. }));

        let big = ControlProblem::scalar(
            0.0,
            1.0,
            ActionSet::unit(),
            |_, _, _| 5.0,
            |_, _, _| 1.0,
            terminal,
        )
        .with_bound(2.0);
        let err = simulate(&big, &pol, &g, RngStream::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::CoefficientBound { step: 0, .. }));

        let bad_payoff = drifted(0.0).with_payoff(|_| f64::INFINITY);
        let sol = simulate(&bad_payoff, &pol, &g, RngStream::new(0, 0)).unwrap();
        assert!(payoff(&bad_payoff, &sol).is_err());
    }

    #[test]
    fn augmented_blocks() {
        let g = grid();
        let p = drifted(0.0);
        let c = 0.3;
        let pol = Policy::augmented("gamma-slope", move |_, v| {
            // constant action recovered from Gamma where possible
            if v.gamma.len() > 1 {
                v.gamma.current()[0] / v.gamma.current_time()
            } else {
                c
            }
        });
        let sol = simulate_augmented(&p, &pol, &g, RngStream::new(2, 2)).unwrap();
        assert!((sol.gamma.scalar(g.len() - 1) - c).abs() < 1e-12);
        let open = Policy::open_loop("c", move |_, _| c);
        let reference = simulate(&p, &open, &g, RngStream::new(2, 2)).unwrap();
        for j in 0..g.len() {
            assert!((sol.state.scalar(j) - reference.state.scalar(j)).abs() < 1e-12);
        }
        let aug = sol.augmented_state();
        assert_eq!(aug.dim(), 3);
        for j in 0..g.len() {
            assert_eq!(aug.at(j)[0], sol.brownian.scalar(j));
            assert_eq!(aug.at(j)[1], sol.state.scalar(j));
            assert_eq!(aug.at(j)[2], sol.gamma.scalar(j));
        }
        assert!(simulate_augmented(&p, &open, &g, RngStream::new(2, 2)).is_err());
    }

    #[test]
    fn time_only_law_is_kind_agnostic() {
        let g = grid();
        let p = drifted(0.1);
        let f = |t: f64| (3.0 * t).sin().abs();
        let a = simulate(
            &p,
            &Policy::open_loop("o", move |t, _| f(t)),
            &g,
            RngStream::new(4, 1),
        )
        .unwrap();
        let b = simulate(
            &p,
            &Policy::closed_loop("c", move |t, _| f(t)),
            &g,
            RngStream::new(4, 1),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn splicing_noise_after_a_knot_keeps_the_past() {
        let g = grid();
        let p = drifted(0.0);
        let pol = Policy::closed_loop("x", |_, x| (x.current()[0] * 2.0).rem_euclid(1.0));
        let b1 = sample_brownian(&g, RngStream::new(8, 0), 1).unwrap();
        let b2 = sample_brownian(&g, RngStream::new(8, 1), 1).unwrap();
        let cut = g.len() / 2;
        let mut spliced = b1.values().to_vec();
        for (j, v) in spliced.iter_mut().enumerate().skip(cut + 1) {
            *v = b1.scalar(cut) + b2.scalar(j) - b2.scalar(cut);
        }
        let spliced = SamplePath::new(g.clone(), 1, spliced).unwrap();
        let s1 = simulate_with_brownian(&p, &pol, &b1).unwrap();
        let s2 = simulate_with_brownian(&p, &pol, &spliced).unwrap();
        for j in 0..=cut {
            assert_eq!(s1.state.scalar(j), s2.state.scalar(j));
            assert_eq!(s1.alpha.scalar(j), s2.alpha.scalar(j));
        }
        assert_ne!(s1.state.scalar(g.len() - 1), s2.state.scalar(g.len() - 1));
    }

    #[test]
    fn payoff_examples() {
        let g = grid();
        let still = ControlProblem::scalar(
            0.7,
            1.0,
            ActionSet::unit(),
            |_, _, _| 0.0,
            |_, _, _| 0.0,
            terminal,
        );
        let pol = Policy::open_loop("z", |_, _| 0.0);
        let sol = simulate(&still, &pol, &g, RngStream::new(0, 0)).unwrap();
        assert_eq!(payoff(&still, &sol).unwrap(), 0.7);
        let one = still.clone().with_payoff(|_| 1.0);
        assert_eq!(payoff(&one, &sol).unwrap(), 1.0);

        let rising = ControlProblem::scalar(
            0.0,
            1.0,
            ActionSet::unit(),
            |_, _, a| a,
            |_, _, _| 0.0,
            |s| {
                s.state
                    .values()
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            },
        );
        let sol = simulate(
            &rising,
            &Policy::open_loop("one", |_, _| 1.0),
            &g,
            RngStream::new(0, 0),
        )
        .unwrap();
        assert_eq!(payoff(&rising, &sol).unwrap(), terminal(&sol));
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let g = TimeGrid::uniform(2.0, 10).unwrap();
        let p = drifted(0.0);
        assert!(simulate(
            &p,
            &Policy::open_loop("z", |_, _| 0.0),
            &g,
            RngStream::new(0, 0)
        )
        .is_err());
    }
}
