//! Explicit monotone finite differences for the one-dimensional HJB equation
//!
//! ```text
//! d_t v + sup_a [ 1/2 sigma^2(t,x,a) d_xx v + b(t,x,a) d_x v ] = 0,   v(T,.) = g
//! ```
//!
//! on a uniform space grid, with the supremum taken over a finite action
//! sample. First derivatives are upwinded per action; the second derivative is
//! central. The scheme is monotone when
//! `dt * max_a (sigma^2 / dx^2 + |b| / dx) <= 1`.

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sde::{ActionSet, ControlProblem, Policy};

/// Relative slack on the stability check, absorbing rounding in `dx`.
const CFL_SLACK: f64 = 1e-9;

pub type StateCoefficient = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar control problem whose coefficients read only the current state.
#[derive(Clone)]
pub struct StateProblem {
    pub horizon: f64,
    pub x0: f64,
    pub actions: ActionSet,
    pub drift: StateCoefficient,
    pub diffusion: StateCoefficient,
    pub terminal: TerminalFn,
}

impl std::fmt::Debug for StateProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateProblem")
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("actions", &self.actions)
            .finish_non_exhaustive()
    }
}

impl StateProblem {
    pub fn new(
        horizon: f64,
        x0: f64,
        actions: ActionSet,
        drift: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            horizon,
            x0,
            actions,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            terminal: Arc::new(terminal),
        }
    }

    /// The same dynamics as a path-dependent problem for simulation.
    pub fn to_control_problem(&self) -> ControlProblem {
        let (b, s, g) = (
            self.drift.clone(),
            self.diffusion.clone(),
            self.terminal.clone(),
        );
        ControlProblem::scalar(
            self.x0,
            self.horizon,
            self.actions.clone(),
            move |t, x, a| b(t, x.current()[0], a),
            move |t, x, a| s(t, x.current()[0], a),
            move |sol| g(sol.terminal_state()[0]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Boundary nodes frozen at `g`.
    DirichletFromG,
    /// Boundary nodes copy their interior neighbour.
    NeumannZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    pub n_t: usize,
    pub boundary: Boundary,
}

impl HjbGrid {
    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.n_x - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.node(i)).collect()
    }

    /// Structural checks that do not need the coefficients.
    pub fn validate(&self, x0: f64) -> Result<()> {
        if !(self.x_lo.is_finite() && self.x_hi.is_finite() && self.x_lo < x0 && x0 < self.x_hi) {
            return Err(invalid(
                "x_lo/x_hi",
                format!("need x_lo < x0 = {x0} < x_hi"),
            ));
        }
        if self.n_x < 3 {
            return Err(invalid("n_x", "at least 3 space nodes are required"));
        }
        if self.n_t == 0 {
            return Err(invalid("n_t", "at least one time step is required"));
        }
        Ok(())
    }

    /// Half-width `max|b| T + 6 max sigma sqrt(T)` beyond which the boundary
    /// no longer influences the value at `x0`.
    pub fn recommended_half_width(problem: &StateProblem, actions: &[f64]) -> f64 {
        let (b, s) = coefficient_extremes(problem, actions, &[problem.x0], 16);
        b * problem.horizon + 6.0 * s * problem.horizon.sqrt()
    }
}

fn coefficient_extremes(
    problem: &StateProblem,
    actions: &[f64],
    xs: &[f64],
    n_t: usize,
) -> (f64, f64) {
    let mut b_max: f64 = 0.0;
    let mut s_max: f64 = 0.0;
    for n in 0..=n_t {
        let t = problem.horizon * n as f64 / n_t as f64;
        for &x in xs {
            for &a in actions {
                b_max = b_max.max((problem.drift)(t, x, a).abs());
                s_max = s_max.max((problem.diffusion)(t, x, a).abs());
            }
        }
    }
    (b_max, s_max)
}

/// Largest `sigma^2/dx^2 + |b|/dx` over the layers `t_0..t_{n_t-1}`, nodes and
/// actions.
fn max_rate(problem: &StateProblem, grid: &HjbGrid, actions: &[f64]) -> f64 {
    let dx = grid.dx();
    let dt = problem.horizon / grid.n_t as f64;
    let nodes = grid.nodes();
    let mut rate: f64 = 0.0;
    for n in 0..grid.n_t {
        let t = n as f64 * dt;
        for &x in &nodes {
            for &a in actions {
                let s = (problem.diffusion)(t, x, a);
                let b = (problem.drift)(t, x, a);
                rate = rate.max(s * s / (dx * dx) + b.abs() / dx);
            }
        }
    }
    rate
}

/// Smallest `n_t` meeting the stability bound for the coefficients sampled
/// on `grid`'s layers.
pub fn required_time_steps(problem: &StateProblem, grid: &HjbGrid, actions: &[f64]) -> usize {
    let rate = max_rate(problem, grid, actions);
    ((problem.horizon * rate * (1.0 - CFL_SLACK)).ceil() as usize).max(1)
}

/// `sup_a [1/2 gamma sigma^2 + z b]` over a finite sample; returns the value
/// and the first maximizer.
pub fn hamiltonian(
    t: f64,
    x: f64,
    z: f64,
    gamma: f64,
    problem: &StateProblem,
    actions: &[f64],
) -> Result<(f64, f64)> {
    if actions.is_empty() {
        return Err(invalid("actions", "the action sample is empty"));
    }
    let mut best = (f64::NEG_INFINITY, actions[0]);
    for &a in actions {
        let s = (problem.diffusion)(t, x, a);
        let h = 0.5 * gamma * s * s + z * (problem.drift)(t, x, a);
        if h > best.0 {
            best = (h, a);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbSolution {
    pub grid: HjbGrid,
    pub horizon: f64,
    pub x0: f64,
    /// `(n_t + 1) * n_x` values, time layer major.
    v: Vec<f64>,
    /// `n_t * n_x` maximizers; layer `n` is the action on `[t_n, t_{n+1})`.
    policy: Vec<f64>,
}

impl HjbSolution {
    pub fn dt(&self) -> f64 {
        self.horizon / self.grid.n_t as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.grid.n_t {
            self.horizon
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn value(&self, n: usize, i: usize) -> f64 {
        self.v[n * self.grid.n_x + i]
    }

    pub fn layer(&self, n: usize) -> &[f64] {
        &self.v[n * self.grid.n_x..(n + 1) * self.grid.n_x]
    }

    pub fn action(&self, n: usize, i: usize) -> f64 {
        self.policy[n * self.grid.n_x + i]
    }

    /// Linear interpolation of `v(t_n, .)`.
    pub fn interpolate(&self, n: usize, x: f64) -> f64 {
        let g = &self.grid;
        let s = ((x - g.x_lo) / g.dx()).clamp(0.0, (g.n_x - 1) as f64);
        let i = (s.floor() as usize).min(g.n_x - 2);
        let w = s - i as f64;
        (1.0 - w) * self.value(n, i) + w * self.value(n, i + 1)
    }

    /// `v(0, x0)`.
    pub fn initial_value(&self) -> f64 {
        self.interpolate(0, self.x0)
    }

    /// The maximizer on the time layer containing `t`, at the space node
    /// nearest to `x`.
    pub fn action_at(&self, t: f64, x: f64) -> f64 {
        let g = &self.grid;
        let n = ((t / self.dt()).floor().max(0.0) as usize).min(g.n_t - 1);
        let i = (((x - g.x_lo) / g.dx()).round().max(0.0) as usize).min(g.n_x - 1);
        self.action(n, i)
    }

    /// Rows `t,x,v,a*`, keeping every `t_stride`-th layer (and the last) and
    /// every `x_stride`-th node. The terminal layer has no action.
    pub fn write_csv(&self, mut w: impl Write, t_stride: usize, x_stride: usize) -> io::Result<()> {
        let (t_stride, x_stride) = (t_stride.max(1), x_stride.max(1));
        writeln!(w, "t,x,v,a_star")?;
        let nt = self.grid.n_t;
        for n in (0..=nt).filter(|n| n % t_stride == 0 || *n == nt) {
            for i in (0..self.grid.n_x).step_by(x_stride) {
                let a = if n < nt {
                    self.action(n, i).to_string()
                } else {
                    String::new()
                };
                writeln!(
                    w,
                    "{},{},{},{}",
                    self.time(n),
                    self.grid.node(i),
                    self.value(n, i),
                    a
                )?;
            }
        }
        Ok(())
    }
}

/// Backward explicit time stepping from `v(T, .) = g`.
pub fn solve(problem: &StateProblem, grid: &HjbGrid, actions: &[f64]) -> Result<HjbSolution> {
    if actions.is_empty() {
        return Err(invalid("actions", "the action sample is empty"));
    }
    if !(problem.horizon > 0.0 && problem.horizon.is_finite()) {
        return Err(invalid("horizon", "must be positive and finite"));
    }
    grid.validate(problem.x0)?;
    let dt = problem.horizon / grid.n_t as f64;
    let rate = max_rate(problem, grid, actions);
    if !rate.is_finite() {
        return Err(Error::NonFinite {
            what: "HJB coefficients",
            step: 0,
        });
    }
    if dt * rate > 1.0 + CFL_SLACK {
        return Err(Error::Cfl {
            n_t: grid.n_t,
            required: required_time_steps(problem, grid, actions),
        });
    }

    let nx = grid.n_x;
    let dx = grid.dx();
    let nodes = grid.nodes();
    let mut v = vec![0.0; (grid.n_t + 1) * nx];
    let mut policy = vec![0.0; grid.n_t * nx];
    for (i, &x) in nodes.iter().enumerate() {
        let g = (problem.terminal)(x);
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: "terminal payoff",
                step: grid.n_t,
            });
        }
        v[grid.n_t * nx + i] = g;
    }
    let g_lo = v[grid.n_t * nx];
    let g_hi = v[grid.n_t * nx + nx - 1];

    for n in (0..grid.n_t).rev() {
        let t = n as f64 * dt;
        let (cur, next) = v.split_at_mut((n + 1) * nx);
        let cur = &mut cur[n * nx..];
        let next = &next[..nx];
        let pol = &mut policy[n * nx..(n + 1) * nx];
        for i in 1..nx - 1 {
            let (vm, v0, vp) = (next[i - 1], next[i], next[i + 1]);
            let mut best = f64::NEG_INFINITY;
            let mut arg = actions[0];
            for &a in actions {
                let s = (problem.diffusion)(t, nodes[i], a);
                let b = (problem.drift)(t, nodes[i], a);
                let adv = if b >= 0.0 {
                    b * (vp - v0)
                } else {
                    b * (v0 - vm)
                } / dx;
                let l = 0.5 * s * s * (vp - 2.0 * v0 + vm) / (dx * dx) + adv;
                if l > best {
                    best = l;
                    arg = a;
                }
            }
            cur[i] = v0 + dt * best;
            pol[i] = arg;
        }
        match grid.boundary {
            Boundary::DirichletFromG => {
                cur[0] = g_lo;
                cur[nx - 1] = g_hi;
            }
            Boundary::NeumannZero => {
                cur[0] = cur[1];
                cur[nx - 1] = cur[nx - 2];
            }
        }
        pol[0] = pol[1];
        pol[nx - 1] = pol[nx - 2];
    }
    Ok(HjbSolution {
        grid: *grid,
        horizon: problem.horizon,
        x0: problem.x0,
        v,
        policy,
    })
}

/// Feedback policy `(t, x) -> a*` read off the solution grid.
pub fn extract_policy(solution: &HjbSolution) -> Policy {
    let sol = Arc::new(solution.clone());
    Policy::feedback("hjb-feedback", move |t, x| sol.action_at(t, x[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn controlled(sigma: f64, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> StateProblem {
        StateProblem::new(
            1.0,
            0.0,
            ActionSet::unit(),
            |_, _, a| a,
            move |_, _, _| sigma,
            g,
        )
    }

    fn grid(x_lo: f64, x_hi: f64, n_x: usize, n_t: usize) -> HjbGrid {
        HjbGrid {
            x_lo,
            x_hi,
            n_x,
            n_t,
            boundary: Boundary::DirichletFromG,
        }
    }

    fn phi(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26 is plenty for a 2e-2 comparison.
        let z = x.abs() / std::f64::consts::SQRT_2;
        let t = 1.0 / (1.0 + 0.3275911 * z);
        let poly = t
            * (0.254829592
                + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let erf = 1.0 - poly * (-z * z).exp();
        if x >= 0.0 {
            0.5 * (1.0 + erf)
        } else {
            0.5 * (1.0 - erf)
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let p = controlled(1.0, |x| x);
        assert_eq!(
            hamiltonian(0.0, 0.0, 0.5, 0.0, &p, &[0.0, 1.0]).unwrap(),
            (0.5, 1.0)
        );
        assert_eq!(
            hamiltonian(0.0, 0.0, -0.5, 0.0, &p, &[0.0, 1.0]).unwrap(),
            (0.0, 0.0)
        );
        assert_eq!(
            hamiltonian(0.0, 0.0, 0.0, 0.8, &p, &[0.0, 1.0]).unwrap(),
            (0.4, 0.0)
        );
        assert!(hamiltonian(0.0, 0.0, 0.0, 0.0, &p, &[]).is_err());
    }

    #[test]
    fn linear_payoff_value() {
        let p = controlled(1.0, |x| x);
        let acts = ActionSet::unit().sample(21);
        let sol = solve(&p, &grid(-8.0, 8.0, 321, 800), &acts).unwrap();
        assert!(
            (sol.initial_value() - 1.0).abs() < 1e-2,
            "{}",
            sol.initial_value()
        );
    }

    #[test]
    fn indicator_payoff_matches_gaussian_oracle() {
        let p = controlled(1.0, |x| if x >= 1.0 { 1.0 } else { 0.0 });
        let acts = ActionSet::unit().sample(21);
        let sol = solve(&p, &grid(-7.0, 7.0, 351, 700), &acts).unwrap();
        assert!(
            (sol.initial_value() - phi(0.0)).abs() < 2e-2,
            "{}",
            sol.initial_value()
        );
        assert!((phi(1.0) - 0.841344746).abs() < 1e-6);
    }

    #[test]
    fn deterministic_control() {
        let p = controlled(0.0, |x| x);
        let g = grid(-3.0, 3.0, 121, 400);
        let sol = solve(&p, &g, &ActionSet::unit().sample(11)).unwrap();
        for i in 10..60 {
            assert!((sol.value(0, i) - (g.node(i) + 1.0)).abs() <= g.dx());
        }
        let pol = extract_policy(&sol);
        let crate::sde::PolicyLaw::Feedback(law) = &pol.law else {
            panic!("expected a feedback law");
        };
        for &(t, x) in &[(0.0, 0.0), (0.5, -1.0), (0.99, 1.3)] {
            assert_eq!(law(t, &[x]), 1.0);
        }
    }

    #[test]
    fn extracted_policy_follows_monotonicity_of_g() {
        let acts = ActionSet::unit().sample(11);
        let g = grid(-6.0, 6.0, 121, 400);
        let up = solve(&controlled(1.0, |x| x.tanh()), &g, &acts).unwrap();
        let down = solve(&controlled(1.0, |x| -x.tanh()), &g, &acts).unwrap();
        for n in 0..g.n_t {
            for i in 1..g.n_x - 1 {
                assert_eq!(up.action(n, i), 1.0);
                assert_eq!(down.action(n, i), 0.0);
            }
        }
    }

    #[test]
    fn maximum_principle() {
        let p = controlled(1.3, |x| (3.0 * x).sin().signum());
        let acts = ActionSet::unit().sample(5);
        let sol = solve(&p, &grid(-5.0, 5.0, 101, 500), &acts).unwrap();
        for n in 0..=sol.grid.n_t {
            for &v in sol.layer(n) {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn degenerate_dynamics_keep_g_exactly() {
        let p = StateProblem::new(
            1.0,
            0.0,
            ActionSet::unit(),
            |_, _, _| 0.0,
            |_, _, _| 0.0,
            |x| {
                if x >= 0.3 {
                    1.0
                } else {
                    0.0
                }
            },
        );
        let g = grid(-2.0, 2.0, 81, 10);
        let sol = solve(&p, &g, &ActionSet::unit().sample(3)).unwrap();
        for n in 0..=g.n_t {
            for i in 0..g.n_x {
                assert_eq!(sol.value(n, i), (p.terminal)(g.node(i)));
            }
        }
    }

    #[test]
    fn cfl_violation_reports_required_steps() {
        let p = controlled(1.0, |x| x);
        let g = grid(-7.0, 7.0, 701, 1000);
        let acts = ActionSet::unit().sample(21);
        match solve(&p, &g, &acts) {
            Err(Error::Cfl { n_t, required }) => {
                assert_eq!(n_t, 1000);
                assert_eq!(required, 2550);
                let ok = HjbGrid { n_t: required, ..g };
                assert!(solve(&p, &ok, &acts).is_ok());
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn grid_validation() {
        let p = controlled(1.0, |x| x);
        let acts = [0.0, 1.0];
        assert!(solve(&p, &grid(0.5, 2.0, 11, 10), &acts).is_err());
        assert!(solve(&p, &grid(-1.0, 1.0, 2, 10), &acts).is_err());
        assert!(solve(&p, &grid(-1.0, 1.0, 11, 100), &[]).is_err());
        assert!(HjbGrid::recommended_half_width(&p, &acts) >= 7.0);
    }

    #[test]
    fn neumann_boundary_is_flat() {
        let p = controlled(1.0, |x| x.tanh());
        let g = HjbGrid {
            boundary: Boundary::NeumannZero,
            ..grid(-6.0, 6.0, 121, 400)
        };
        let sol = solve(&p, &g, &[0.0, 1.0]).unwrap();
        for n in 0..g.n_t {
            assert_eq!(sol.value(n, 0), sol.value(n, 1));
            assert_eq!(sol.value(n, g.n_x - 1), sol.value(n, g.n_x - 2));
        }
    }

    #[test]
    fn refinement_differences_shrink() {
        let p = controlled(1.0, |x| (x - 0.5).tanh());
        let acts = ActionSet::unit().sample(11);
        let value = |n_x: usize, n_t: usize| {
            solve(&p, &grid(-6.0, 6.0, n_x, n_t), &acts)
                .unwrap()
                .initial_value()
        };
        let v: Vec<f64> = [(49, 100), (97, 400), (193, 1600)]
            .iter()
            .map(|&(a, b)| value(a, b))
            .collect();
        assert!((v[1] - v[2]).abs() < (v[0] - v[1]).abs());
    }

    #[test]
    fn csv_rows() {
        let p = controlled(1.0, |x| x);
        let sol = solve(&p, &grid(-2.0, 2.0, 5, 20), &[0.0, 1.0]).unwrap();
        let mut out = Vec::new();
        sol.write_csv(&mut out, 10, 1).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,v,a_star");
        assert_eq!(lines.len(), 1 + 3 * 5);
        assert!(lines.last().unwrap().ends_with(','));
    }

    #[test]
    fn control_problem_view() {
        let p = controlled(0.0, |x| 2.0 * x);
        let cp = p.to_control_problem();
        let g = crate::paths::TimeGrid::uniform(1.0, 10).unwrap();
        let pol = Policy::feedback("one", |_, _| 1.0);
        let sol = crate::sde::simulate(&cp, &pol, &g, crate::paths::RngStream::new(0, 0)).unwrap();
        assert!((crate::sde::payoff(&cp, &sol).unwrap() - 2.0).abs() < 1e-12);
    }
}
