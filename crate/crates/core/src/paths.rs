//! Time grids, sampled paths and reproducible Gaussian streams.
//!
//! A [`TimeGrid`] carries two nested sets of knots: the geometric coarse knots
//! `t_{-K} < ... < t_{-1} < t_0 = T` on which the Tsirelson drift is built, and
//! a fine Euler grid that contains every coarse knot as an exact element.
//!
//! Paths are refreshed per grid: every grid draws its own Brownian increments
//! from a fixed [`RngStream`], so halving the step does not reproduce values
//! at shared knots. The distributional tests only rely on the law of each path.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug)]
struct GridInner {
    horizon: f64,
    levels: usize,
    ratio: f64,
    coarse: Vec<f64>,
    coarse_index: Vec<usize>,
    fine: Vec<f64>,
    euler_step: f64,
    /// For fine index j, the coarse interval `c` with `coarse[c] <= fine[j] < coarse[c + 1]`.
    coarse_of: Vec<Option<usize>>,
}

/// Nested coarse/fine time grid on `[0, T]`. Cheap to clone.
#[derive(Debug, Clone)]
pub struct TimeGrid(Arc<GridInner>);

impl PartialEq for TimeGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.horizon == other.0.horizon
                && self.0.coarse == other.0.coarse
                && self.0.fine == other.0.fine)
    }
}

impl TimeGrid {
    /// Truncated Tsirelson grid: coarse knots `t_k = T * r^(-k)` for `k = -K..=0`.
    ///
    /// Each coarse interval is split into `substeps` equal Euler steps. The
    /// stub `[0, t_{-K}]` is split into `floor(t_{-K} / dt) + 1` equal steps,
    /// where `dt` is the finest coarse substep, so every stub step is strictly
    /// shorter than `dt`.
    pub fn tsirelson(horizon: f64, levels: usize, ratio: f64, substeps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(
                "horizon",
                format!("must be positive, got {horizon}"),
            ));
        }
        if levels < 2 {
            return Err(invalid("levels", format!("K >= 2 required, got {levels}")));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(invalid("ratio", format!("must lie in (0, 1), got {ratio}")));
        }
        if substeps == 0 {
            return Err(invalid("substeps", "must be at least 1"));
        }

        // coarse[c] = t_{c - K}
        let mut coarse: Vec<f64> = (0..=levels)
            .map(|c| horizon * ratio.powi((levels - c) as i32))
            .collect();
        coarse[levels] = horizon;
        if coarse[0] <= 0.0 {
            return Err(invalid("levels", "t_{-K} underflows to zero"));
        }
        for w in coarse.windows(2) {
            if w[1] <= w[0] {
                return Err(invalid("levels", "coarse knots do not strictly increase"));
            }
        }

        let euler_step = (coarse[1] - coarse[0]) / substeps as f64;
        let stub_steps = (coarse[0] / euler_step).floor() as usize + 1;

        let mut fine = Vec::with_capacity(stub_steps + levels * substeps + 1);
        for i in 0..stub_steps {
            fine.push(coarse[0] * i as f64 / stub_steps as f64);
        }
        let mut coarse_index = Vec::with_capacity(levels + 1);
        for c in 0..levels {
            coarse_index.push(fine.len());
            fine.push(coarse[c]);
            let width = coarse[c + 1] - coarse[c];
            for i in 1..substeps {
                fine.push(coarse[c] + width * i as f64 / substeps as f64);
            }
        }
        coarse_index.push(fine.len());
        fine.push(horizon);

        Ok(Self::assemble(
            horizon,
            levels,
            ratio,
            coarse,
            coarse_index,
            fine,
            euler_step,
        ))
    }

    /// Uniform grid with no Tsirelson levels; the only coarse knot is `T`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(
                "horizon",
                format!("must be positive, got {horizon}"),
            ));
        }
        if steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        let mut fine: Vec<f64> = (0..steps)
            .map(|i| horizon * i as f64 / steps as f64)
            .collect();
        fine.push(horizon);
        Ok(Self::assemble(
            horizon,
            0,
            f64::NAN,
            vec![horizon],
            vec![steps],
            fine,
            horizon / steps as f64,
        ))
    }

    fn assemble(
        horizon: f64,
        levels: usize,
        ratio: f64,
        coarse: Vec<f64>,
        coarse_index: Vec<usize>,
        fine: Vec<f64>,
        euler_step: f64,
    ) -> Self {
        let mut coarse_of = vec![None; fine.len()];
        for c in 0..coarse_index.len().saturating_sub(1) {
            for slot in &mut coarse_of[coarse_index[c]..coarse_index[c + 1]] {
                *slot = Some(c);
            }
        }
        Self(Arc::new(GridInner {
            horizon,
            levels,
            ratio,
            coarse,
            coarse_index,
            fine,
            euler_step,
            coarse_of,
        }))
    }

    pub fn horizon(&self) -> f64 {
        self.0.horizon
    }

    /// Number of Tsirelson levels `K` (0 for uniform grids).
    pub fn levels(&self) -> usize {
        self.0.levels
    }

    pub fn ratio(&self) -> f64 {
        self.0.ratio
    }

    /// Coarse knots in increasing order, `t_{-K}` first and `t_0 = T` last.
    pub fn coarse_knots(&self) -> &[f64] {
        &self.0.coarse
    }

    pub fn fine_knots(&self) -> &[f64] {
        &self.0.fine
    }

    /// Reference Euler step: the finest coarse-interval substep.
    pub fn euler_step(&self) -> f64 {
        self.0.euler_step
    }

    /// Number of fine knots.
    pub fn len(&self) -> usize {
        self.0.fine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.fine.is_empty()
    }

    /// Number of Euler steps.
    pub fn steps(&self) -> usize {
        self.0.fine.len() - 1
    }

    /// Length of Euler step `j`, i.e. `t_{j+1} - t_j`.
    pub fn dt(&self, j: usize) -> f64 {
        self.0.fine[j + 1] - self.0.fine[j]
    }

    /// Fine index of `t` if it is a knot (exact comparison).
    pub fn knot_index(&self, t: f64) -> Option<usize> {
        self.0
            .fine
            .binary_search_by(|k| k.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
            .ok()
    }

    /// Largest fine index whose knot is `<= t`.
    pub fn index_at_or_before(&self, t: f64) -> Option<usize> {
        last_at_or_before(&self.0.fine, t)
    }

    /// Coarse knot `t_k` for `k` in `-K..=0`.
    pub fn coarse_knot(&self, k: i64) -> Option<f64> {
        self.coarse_slot(k).map(|c| self.0.coarse[c])
    }

    /// Fine index of the coarse knot `t_k`.
    pub fn coarse_fine_index(&self, k: i64) -> Option<usize> {
        self.coarse_slot(k).map(|c| self.0.coarse_index[c])
    }

    fn coarse_slot(&self, k: i64) -> Option<usize> {
        let c = k + self.0.levels as i64;
        (k <= 0 && c >= 0).then_some(c as usize)
    }

    /// Level `k` such that fine knot `j` lies in `[t_k, t_{k+1})`, or `None`
    /// on the stub `[0, t_{-K})` and at `T`.
    pub fn level_of_index(&self, j: usize) -> Option<i64> {
        self.0.coarse_of[j].map(|c| c as i64 - self.0.levels as i64)
    }

    /// Level `k` with `t` in `[t_k, t_{k+1})`, for arbitrary `t` in `[0, T)`.
    pub fn level_of_time(&self, t: f64) -> Option<i64> {
        let c = last_at_or_before(&self.0.coarse, t)?;
        (c < self.0.levels).then(|| c as i64 - self.0.levels as i64)
    }
}

fn last_at_or_before(knots: &[f64], t: f64) -> Option<usize> {
    let n = knots.partition_point(|&k| k <= t);
    n.checked_sub(1)
}

/// A path sampled on the fine knots of a grid, `dim` values per knot.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::Dimension {
                expected: grid.len() * dim,
                got: values.len(),
                context: "path values",
            });
        }
        Ok(Self { grid, dim, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        let values = vec![0.0; grid.len() * dim];
        Self { grid, dim, values }
    }

    /// Scalar path with `values[j] = f(t_j)`.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.fine_knots().iter().map(|&t| f(t)).collect();
        Self {
            grid,
            dim: 1,
            values,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn at(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// First component at knot `j`.
    pub fn scalar(&self, j: usize) -> f64 {
        self.values[j * self.dim]
    }

    /// Value at the last knot at or before `t`; `None` outside `[0, T]`.
    pub fn value_at(&self, t: f64) -> Option<&[f64]> {
        if t > self.grid.horizon() {
            return None;
        }
        self.grid.index_at_or_before(t).map(|j| self.at(j))
    }

    /// View of the path restricted to knots `0..=last`.
    pub fn view(&self, last: usize) -> PathView<'_> {
        PathView {
            knots: self.grid.fine_knots(),
            values: &self.values[..(last + 1) * self.dim],
            dim: self.dim,
        }
    }

    pub fn full_view(&self) -> PathView<'_> {
        self.view(self.len() - 1)
    }
}

/// Borrowed, truncated view of a path: only knots up to the current one are
/// visible, which is how adaptedness is enforced for coefficients and policies.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    knots: &'a [f64],
    values: &'a [f64],
    dim: usize,
}

impl<'a> PathView<'a> {
    pub(crate) fn from_raw(knots: &'a [f64], values: &'a [f64], dim: usize) -> Self {
        debug_assert!(values.len().is_multiple_of(dim) && values.len() / dim <= knots.len());
        Self { knots, values, dim }
    }

    /// Number of visible knots.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn last_index(&self) -> usize {
        self.len() - 1
    }

    pub fn current_time(&self) -> f64 {
        self.knots[self.last_index()]
    }

    pub fn current(&self) -> &'a [f64] {
        self.at(self.last_index())
    }

    /// Visible knot times.
    pub fn knots(&self) -> &'a [f64] {
        &self.knots[..self.len()]
    }

    pub fn at(&self, j: usize) -> &'a [f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn scalar(&self, j: usize) -> f64 {
        self.values[j * self.dim]
    }

    /// Value at the last visible knot at or before `t`. Reads past the
    /// current time return `None`.
    pub fn value_at(&self, t: f64) -> Option<&'a [f64]> {
        if t > self.current_time() {
            return None;
        }
        last_at_or_before(self.knots(), t).map(|j| self.at(j))
    }

    /// Further truncation to knots `0..=last`.
    pub fn truncated(&self, last: usize) -> PathView<'a> {
        assert!(last < self.len(), "truncation past the visible horizon");
        PathView {
            knots: self.knots,
            values: &self.values[..(last + 1) * self.dim],
            dim: self.dim,
        }
    }
}

/// `(path(t) - path(s)) / (t - s)` for fine knots `s < t`.
pub fn increment_quotient(path: &SamplePath, s: f64, t: f64) -> Result<Vec<f64>> {
    if s.is_nan() || t.is_nan() || s >= t {
        return Err(invalid("s", format!("need s < t, got s = {s}, t = {t}")));
    }
    let i = path
        .grid()
        .knot_index(s)
        .ok_or(Error::NotAKnot { time: s })?;
    let j = path
        .grid()
        .knot_index(t)
        .ok_or(Error::NotAKnot { time: t })?;
    let width = t - s;
    Ok(path
        .at(j)
        .iter()
        .zip(path.at(i))
        .map(|(b, a)| (b - a) / width)
        .collect())
}

/// Identifies one reproducible Gaussian stream.
///
/// Streams are ChaCha8 keyed by `master_seed` with `stream_index` selecting the
/// ChaCha stream, so path `i` never depends on how many other paths were drawn
/// or in what order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// Streams `0..n` under one master seed.
    pub fn family(master_seed: u64, n: usize) -> Vec<Self> {
        (0..n as u64).map(|i| Self::new(master_seed, i)).collect()
    }
}

/// Raw Brownian increments, `steps * d` values, step-major.
pub(crate) fn sample_increments(grid: &TimeGrid, stream: RngStream, d: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(grid.steps() * d);
    for j in 0..grid.steps() {
        let scale = grid.dt(j).sqrt();
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            out.push(scale * z);
        }
    }
    out
}

pub(crate) fn cumulate(grid: &TimeGrid, d: usize, increments: &[f64]) -> SamplePath {
    let mut values = vec![0.0; grid.len() * d];
    for j in 0..grid.steps() {
        for i in 0..d {
            values[(j + 1) * d + i] = values[j * d + i] + increments[j * d + i];
        }
    }
    SamplePath {
        grid: grid.clone(),
        dim: d,
        values,
    }
}

/// `d`-dimensional Brownian motion on the fine knots with `B_0 = 0`.
pub fn sample_brownian(grid: &TimeGrid, stream: RngStream, d: usize) -> Result<SamplePath> {
    if d == 0 {
        return Err(invalid("dimension", "must be positive"));
    }
    Ok(cumulate(grid, d, &sample_increments(grid, stream, d)))
}
