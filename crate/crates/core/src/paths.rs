//! Time grids and piecewise-linear paths.
//!
//! Every absolutely continuous input or output is carried as a
//! piecewise-linear path, so integrals over `(0, T)` of derivative terms are
//! exact finite sums over grid steps.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Nodes closer than this (relative to `T`) are merged when grids are united.
const MERGE_TOL: f64 = 64.0 * f64::EPSILON;

/// Strictly increasing nodes `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid("a grid needs at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidGrid("the first node must be exactly 0"));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("nodes must be finite"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("nodes must be strictly increasing"));
        }
        Ok(Self { nodes })
    }

    /// `steps` equal steps on `[0, t_end]`.
    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t_end > 0.0) {
            return Err(Error::InvalidGrid("uniform grid needs steps > 0 and T > 0"));
        }
        let nodes = (0..=steps)
            .map(|k| if k == steps { t_end } else { t_end * k as f64 / steps as f64 })
            .collect();
        Self::new(nodes)
    }

    /// Uniform grid of step `h = T / steps` shifted by half a step: nodes
    /// `0, h/2, 3h/2, ..., T - h/2, T`. Dyadic event times such as `T/2` never
    /// fall on a node of this grid, for any `steps`.
    pub fn staggered(t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t_end > 0.0) {
            return Err(Error::InvalidGrid("staggered grid needs steps > 0 and T > 0"));
        }
        let h = t_end / steps as f64;
        let mut nodes = Vec::with_capacity(steps + 2);
        nodes.push(0.0);
        for k in 0..steps {
            nodes.push((k as f64 + 0.5) * h);
        }
        nodes.push(t_end);
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn step(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    pub fn max_step(&self) -> f64 {
        (0..self.steps()).map(|k| self.step(k)).fold(0.0, f64::max)
    }

    /// Index `k` of the step `[t_k, t_{k+1}]` containing `t` (clamped to the grid).
    pub fn locate(&self, t: f64) -> usize {
        let n = self.steps();
        if t <= self.nodes[0] {
            return 0;
        }
        if t >= self.nodes[n] {
            return n - 1;
        }
        // partition_point gives the first node strictly greater than t.
        let idx = self.nodes.partition_point(|&s| s <= t);
        (idx - 1).min(n - 1)
    }

    /// Union of node sets; both grids must end at the same time.
    pub fn union(&self, other: &TimeGrid) -> Result<TimeGrid> {
        let (ta, tb) = (self.t_end(), other.t_end());
        let tol = MERGE_TOL * ta.abs().max(tb.abs()).max(1.0);
        if (ta - tb).abs() > tol {
            return Err(Error::EndTimeMismatch { left: ta, right: tb });
        }
        if self == other {
            return Ok(self.clone());
        }
        let (a, b) = (&self.nodes, &other.nodes);
        let mut merged: Vec<f64> = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let next = if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
                i += 1;
                a[i - 1]
            } else {
                j += 1;
                b[j - 1]
            };
            match merged.last() {
                Some(&last) if next - last <= tol => {}
                _ => merged.push(next),
            }
        }
        // The final node is T of the first grid, whichever copy survived.
        let last = merged.len() - 1;
        merged[last] = ta;
        TimeGrid::new(merged)
    }

    /// The grid restricted to `[0, t_k]`.
    pub fn truncate(&self, k: usize) -> Result<TimeGrid> {
        if k == 0 || k > self.steps() {
            return Err(Error::IndexOutOfRange { index: k, len: self.len() });
        }
        TimeGrid::new(self.nodes[..=k].to_vec())
    }
}

/// Piecewise-linear path in `R^d`: one value per grid node, affine in between.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PLPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl PLPath {
    /// `values` is node-major: `values[k * dim + i]`.
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("path dimension must be positive".into()));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * dim,
                found: values.len(),
            });
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_fn(grid: TimeGrid, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut values = alloc::vec![0.0; grid.len() * dim];
        for (k, &t) in grid.nodes().iter().enumerate() {
            f(t, &mut values[k * dim..(k + 1) * dim]);
        }
        Self { grid, dim, values }
    }

    pub fn constant(grid: TimeGrid, value: &[f64]) -> Self {
        let dim = value.len();
        Self::from_fn(grid, dim, |_, out| out.copy_from_slice(value))
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

    /// Value at node `k`.
    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn initial(&self) -> &[f64] {
        self.value(0)
    }

    pub fn last(&self) -> &[f64] {
        self.value(self.grid.len() - 1)
    }

    /// Affine interpolation at time `t` (clamped to `[0, T]`).
    pub fn evaluate_into(&self, t: f64, out: &mut [f64]) {
        let k = self.grid.locate(t);
        let (t0, t1) = (self.grid.nodes[k], self.grid.nodes[k + 1]);
        let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let (a, b) = (self.value(k), self.value(k + 1));
        for i in 0..self.dim {
            out[i] = a[i] + s * (b[i] - a[i]);
        }
    }

    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim];
        self.evaluate_into(t, &mut out);
        out
    }

    /// Slope on step `k` written into `out`.
    pub fn slope_into(&self, k: usize, out: &mut [f64]) {
        let dt = self.grid.step(k);
        let (a, b) = (self.value(k), self.value(k + 1));
        for i in 0..self.dim {
            out[i] = (b[i] - a[i]) / dt;
        }
    }

    /// Euclidean norm of the slope on step `k`.
    pub fn slope_norm(&self, k: usize) -> f64 {
        let dt = self.grid.step(k);
        math::dist(self.value(k + 1), self.value(k)) / dt
    }

    /// `∫_0^T |p'(t)| dt`.
    pub fn w11_seminorm(&self) -> f64 {
        (0..self.grid.steps())
            .map(|k| math::dist(self.value(k + 1), self.value(k)))
            .sum()
    }

    /// Values re-sampled at the nodes of `grid` (which must span the same `T`).
    pub fn resample(&self, grid: &TimeGrid) -> PLPath {
        let dim = self.dim;
        PLPath::from_fn(grid.clone(), dim, |t, out| self.evaluate_into(t, out))
    }

    /// `self + s * other` on a shared grid.
    pub fn add_scaled(&self, s: f64, other: &PLPath) -> Result<PLPath> {
        check_dims(self, other)?;
        let (a, b) = refine_to_common_grid(self, other)?;
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x + s * y).collect();
        PLPath::new(a.grid, a.dim, values)
    }

    /// The path restricted to `[0, t_k]`.
    pub fn truncate(&self, k: usize) -> Result<PLPath> {
        let grid = self.grid.truncate(k)?;
        let values = self.values[..(k + 1) * self.dim].to_vec();
        PLPath::new(grid, self.dim, values)
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| math::norm(self.value(k)))
            .fold(0.0, f64::max)
    }
}

fn check_dims(p: &PLPath, q: &PLPath) -> Result<()> {
    if p.dim != q.dim {
        return Err(Error::DimensionMismatch { expected: p.dim, found: q.dim });
    }
    Ok(())
}

/// Slope `(p_{k+1} - p_k) / (t_{k+1} - t_k)` of step `k`.
pub fn derivative(p: &PLPath, k: usize) -> Result<Vec<f64>> {
    if k >= p.grid.steps() {
        return Err(Error::IndexOutOfRange { index: k, len: p.grid.steps() });
    }
    let mut out = alloc::vec![0.0; p.dim];
    p.slope_into(k, &mut out);
    Ok(out)
}

/// Both paths re-expressed on the union of their node sets.
pub fn refine_to_common_grid(p: &PLPath, q: &PLPath) -> Result<(PLPath, PLPath)> {
    if p.grid == q.grid {
        return Ok((p.clone(), q.clone()));
    }
    let grid = p.grid.union(&q.grid)?;
    Ok((p.resample(&grid), q.resample(&grid)))
}

/// `|p(0) - q(0)| + ∫_0^T |p'(t) - q'(t)| dt`, exact for piecewise-linear paths.
pub fn w11_distance(p: &PLPath, q: &PLPath) -> Result<f64> {
    check_dims(p, q)?;
    let (a, b) = refine_to_common_grid(p, q)?;
    let d = a.dim;
    let mut total = math::dist(a.value(0), b.value(0));
    let mut diff = alloc::vec![0.0; d];
    for k in 0..a.grid.steps() {
        for (i, di) in diff.iter_mut().enumerate() {
            *di = (a.value(k + 1)[i] - a.value(k)[i]) - (b.value(k + 1)[i] - b.value(k)[i]);
        }
        total += math::norm(&diff);
    }
    Ok(total)
}

/// `max_t |p(t) - q(t)|`; exact since the difference is piecewise linear.
pub fn sup_distance(p: &PLPath, q: &PLPath) -> Result<f64> {
    check_dims(p, q)?;
    let (a, b) = refine_to_common_grid(p, q)?;
    Ok((0..a.grid.len())
        .map(|k| math::dist(a.value(k), b.value(k)))
        .fold(0.0, f64::max))
}

/// Exponential weight `M_ε(t) = exp(-M(t)/ε)` built from a nondecreasing
/// cumulative rate `M` with `M(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightProfile {
    epsilon: f64,
    cumulative: PLPath,
}

impl WeightProfile {
    pub fn new(epsilon: f64, cumulative: PLPath) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if cumulative.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, found: cumulative.dim() });
        }
        if cumulative.values[0] != 0.0 {
            return Err(Error::InvalidParameter("cumulative weight must start at 0".into()));
        }
        if cumulative.values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter("cumulative weight must be nondecreasing".into()));
        }
        Ok(Self { epsilon, cumulative })
    }

    /// Weight profile with `M ≡ 0`.
    pub fn flat(epsilon: f64, grid: TimeGrid) -> Result<Self> {
        Self::new(epsilon, PLPath::constant(grid, &[0.0]))
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn cumulative(&self) -> &PLPath {
        &self.cumulative
    }

    /// `-M(t̄)/ε` at the midpoint `t̄` of `[t0, t1]`.
    fn log_weight_between(&self, t0: f64, t1: f64) -> f64 {
        let m = self.cumulative.evaluate(0.5 * (t0 + t1))[0];
        -m / self.epsilon
    }
}

/// `log ‖p‖_ε` with `‖p‖_ε = Σ_k M_ε(t̄_k) |p'_k| Δt_k`; `-∞` for a flat path.
/// Evaluated in log space so that large `M(T)/ε` cannot underflow the ratio
/// of two weighted norms.
pub fn log_weighted_w11_norm(p: &PLPath, wp: &WeightProfile) -> Result<f64> {
    let grid = p.grid.union(wp.cumulative.grid())?;
    let q = p.resample(&grid);
    let terms: Vec<f64> = (0..grid.steps())
        .filter_map(|k| {
            let inc = math::dist(q.value(k + 1), q.value(k));
            (inc > 0.0).then(|| {
                wp.log_weight_between(grid.nodes[k], grid.nodes[k + 1]) + math::ln(inc)
            })
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// `Σ_k M_ε(t̄_k) |p'_k| Δt_k`, weights at step midpoints.
pub fn weighted_w11_norm(p: &PLPath, wp: &WeightProfile) -> Result<f64> {
    Ok(math::exp(log_weighted_w11_norm(p, wp)?))
}

/// `log Σ_k M_ε(t̄_k) Δt_k`: the weighted length of `[0, T]`.
pub fn log_weighted_measure(wp: &WeightProfile) -> f64 {
    let g = wp.cumulative.grid();
    let terms: Vec<f64> = (0..g.steps())
        .map(|k| wp.log_weight_between(g.nodes[k], g.nodes[k + 1]) + math::ln(g.step(k)))
        .collect();
    log_sum_exp(&terms)
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let s: f64 = terms.iter().map(|t| math::exp(t - top)).sum();
    top + math::ln(s)
}

/// `log‖p − q‖_ε` for two paths.
pub fn log_weighted_distance(p: &PLPath, q: &PLPath, wp: &WeightProfile) -> Result<f64> {
    check_dims(p, q)?;
    let diff = p.add_scaled(-1.0, q)?;
    log_weighted_w11_norm(&diff, wp)
}
