//! Sweeping process with prescribed inputs: find `xi` with
//! `x = u - xi in Z(w)`, `x(0) = x0`, and the prox-regular variational
//! inequality `<x - z, xi'> + |xi'| / (2r) |x - z|^2 >= 0` for `z in Z(w)`.
//!
//! Two time-stepping schemes share one contract: catching-up (project the
//! advanced state onto the next set) and a boundary flow that moves `xi`
//! along the normal at rate `B / |grad G|^2` while active.

use alloc::vec;
use alloc::vec::Vec;

use crate::constraint::LevelSetConstraint;
use crate::error::{Error, Result};
use crate::math::{self, Sampler};
use crate::paths::{self, PLPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Scheme {
    CatchingUp,
    BoundaryOde,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverOptions {
    /// Step demand `|du| + C_K |dw|` must stay below `gate_factor * r`.
    pub gate_factor: f64,
    /// Band below `G = 1` that counts as the boundary.
    pub activation_tol: f64,
    /// Test points per step for the variational-inequality residual; 0 disables it.
    pub vi_samples: usize,
    pub compensator: bool,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { gate_factor: 0.5, activation_tol: 1e-8, vi_samples: 64, compensator: true, seed: 0x5eed }
    }
}

/// Inputs `u`, `w` on a shared grid and a feasible initial state.
#[derive(Debug, Clone)]
pub struct SweepProblem {
    pub cons: LevelSetConstraint,
    pub u: PLPath,
    pub w: PLPath,
    pub x0: Vec<f64>,
}

impl SweepProblem {
    /// Refines `u` and `w` to a common grid and checks `x0 in Z(w(0))`.
    pub fn new(cons: LevelSetConstraint, u: PLPath, w: PLPath, x0: Vec<f64>) -> Result<Self> {
        if u.dim() != cons.state_dim() {
            return Err(Error::DimensionMismatch { expected: cons.state_dim(), found: u.dim() });
        }
        if w.dim() != cons.param_dim() {
            return Err(Error::DimensionMismatch { expected: cons.param_dim(), found: w.dim() });
        }
        if x0.len() != cons.state_dim() {
            return Err(Error::DimensionMismatch { expected: cons.state_dim(), found: x0.len() });
        }
        let (u, w) = paths::refine_to_common_grid(&u, &w)?;
        let level = cons.value(&x0, w.initial());
        if level > 1.0 + cons.options().level_tol {
            return Err(Error::InfeasibleInitialState { level });
        }
        Ok(Self { cons, u, w, x0 })
    }

    /// `C_K` for `K = max_k |w_k|`.
    pub fn hausdorff_constant(&self) -> f64 {
        let k = (0..self.w.grid().len()).map(|i| math::norm(self.w.value(i))).fold(0.0, f64::max);
        self.cons.constants().hausdorff_constant(k)
    }

    /// Worst step of the sweep gate.
    pub fn gate(&self, gate_factor: f64) -> GateReport {
        let ck = self.hausdorff_constant();
        let limit = gate_factor * self.cons.constants().r;
        let mut worst = GateReport { hausdorff_constant: ck, limit, worst_demand: 0.0, worst_step: 0 };
        for k in 0..self.u.grid().steps() {
            let du = math::dist(self.u.value(k + 1), self.u.value(k));
            let dw = math::dist(self.w.value(k + 1), self.w.value(k));
            let demand = du + ck * dw;
            if demand > worst.worst_demand {
                worst.worst_demand = demand;
                worst.worst_step = k;
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GateReport {
    pub hausdorff_constant: f64,
    pub limit: f64,
    pub worst_demand: f64,
    pub worst_step: usize,
}

impl GateReport {
    pub fn margin(&self) -> f64 {
        self.limit - self.worst_demand
    }

    pub fn check(&self) -> Result<()> {
        if self.worst_demand > self.limit {
            return Err(Error::SweepGateViolated {
                step: self.worst_step,
                demand: self.worst_demand,
                limit: self.limit,
                refinement: math::ceil(self.worst_demand / self.limit) as usize,
            });
        }
        Ok(())
    }
}

/// Diagnostics of the step `[t_k, t_{k+1}]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub active: bool,
    /// `max(B, 0)` on the active set, else 0.
    pub a: f64,
    pub b: f64,
    /// Slope of the computed `xi` on this step.
    pub xidot_norm: f64,
    /// Normal-flow slope before re-projection (boundary flow only; zero for catching-up).
    pub drive_rate: Vec<f64>,
    /// `G` at the unprojected candidate and after projection, both against `w_{k+1}`.
    pub g_pre: f64,
    pub g_post: f64,
    pub vi_residual: f64,
    pub vi_scale: f64,
    pub compensator: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub xi: PLPath,
    pub x: PLPath,
    pub steps: Vec<StepRecord>,
    pub gate: GateReport,
}

/// `B = <u', grad_x G> + <w', grad_w G>` at `(x, w)`, and whether `x` is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveTerms {
    pub a_proxy: f64,
    pub b: f64,
    pub active: bool,
}

pub fn drive_terms(
    cons: &LevelSetConstraint,
    x: &[f64],
    w: &[f64],
    u_dot: &[f64],
    w_dot: &[f64],
    activation_tol: f64,
) -> DriveTerms {
    let b = math::dot(u_dot, &cons.grad_x(x, w)) + math::dot(w_dot, &cons.grad_w(x, w));
    let active = cons.value(x, w) >= 1.0 - activation_tol;
    let a_proxy = if active { b.max(0.0) } else { 0.0 };
    DriveTerms { a_proxy, b, active }
}

/// `s = grad_x G / (dist(x, boundary) + |grad_x G|^2) <w', grad_w G>`.
pub fn compensator(cons: &LevelSetConstraint, x: &[f64], w: &[f64], w_dot: &[f64]) -> Result<Vec<f64>> {
    let n = cons.state_dim();
    if w_dot.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; n]);
    }
    let gw = math::dot(w_dot, &cons.grad_w(x, w));
    if gw == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let gx = cons.grad_x(x, w);
    let denom = cons.distance_to_boundary(x, w)? + math::dot(&gx, &gx);
    if denom == 0.0 {
        return Ok(vec![0.0; n]);
    }
    Ok(gx.iter().map(|g| g * gw / denom).collect())
}

/// `<x - z, v> + |v| / (2r) |x - z|^2`.
pub fn vi_term(x: &[f64], z: &[f64], v: &[f64], r: f64) -> f64 {
    let d = math::sub(x, z);
    math::dot(&d, v) + math::norm(v) / (2.0 * r) * math::dot(&d, &d)
}

/// Seeded test points in `Z(w)` for step `k`: interior by rejection,
/// boundary by ray shooting, and points near `x` pulled back onto the set.
pub fn vi_test_points(cons: &LevelSetConstraint, w: &[f64], x: &[f64], count: usize, seed: u64, k: usize) -> Vec<Vec<f64>> {
    let n = cons.state_dim();
    let mut s = Sampler::new(seed, k as u64);
    let extent = cons.extent(w);
    let anchor = cons.anchor(w);
    let interior = count / 4;
    let boundary = count / 4;
    let mut pts = Vec::with_capacity(count);
    for _ in 0..interior {
        pts.push(cons.sample_member(w, &mut s));
    }
    for _ in 0..boundary {
        let d = s.unit_vector(n);
        if let Ok(b) = cons.boundary_point(w, &d) {
            pts.push(b);
        }
    }
    while pts.len() < count {
        let off = s.unit_vector(n);
        let len = s.range(0.0, 0.2) * extent;
        let z = math::add_scaled(x, len, &off);
        if cons.value(&z, w) <= 1.0 {
            pts.push(z);
            continue;
        }
        let dir = math::sub(&z, &anchor);
        let dn = math::norm(&dir);
        let dir: Vec<f64> = dir.iter().map(|v| v / dn).collect();
        match cons.boundary_point(w, &dir) {
            Ok(b) => pts.push(b),
            Err(_) => pts.push(anchor.clone()),
        }
    }
    pts
}

/// `max(1, |xi'| (1 + extent))`: magnitude of a residual term at this step.
pub fn vi_scale(xidot_norm: f64, extent: f64) -> f64 {
    (xidot_norm * (1.0 + extent)).max(1.0)
}

pub fn solve(prob: &SweepProblem, scheme: Scheme, opts: &SolverOptions) -> Result<Trajectory> {
    match scheme {
        Scheme::CatchingUp => solve_catching_up(prob, opts),
        Scheme::BoundaryOde => solve_boundary_ode(prob, opts),
    }
}

struct Stepper<'a> {
    prob: &'a SweepProblem,
    opts: &'a SolverOptions,
    xs: Vec<f64>,
    xis: Vec<f64>,
    steps: Vec<StepRecord>,
}

impl<'a> Stepper<'a> {
    fn new(prob: &'a SweepProblem, opts: &'a SolverOptions) -> Self {
        let n = prob.cons.state_dim();
        let nodes = prob.u.grid().len();
        let mut xs = Vec::with_capacity(nodes * n);
        let mut xis = Vec::with_capacity(nodes * n);
        xs.extend_from_slice(&prob.x0);
        xis.extend(prob.u.initial().iter().zip(&prob.x0).map(|(u, x)| u - x));
        Self { prob, opts, xs, xis, steps: Vec::with_capacity(nodes - 1) }
    }

    fn x(&self, k: usize) -> &[f64] {
        let n = self.prob.cons.state_dim();
        &self.xs[k * n..(k + 1) * n]
    }

    fn xi(&self, k: usize) -> &[f64] {
        let n = self.prob.cons.state_dim();
        &self.xis[k * n..(k + 1) * n]
    }

    fn push_node(&mut self, k1: usize, x: &[f64]) {
        let u = self.prob.u.value(k1);
        self.xs.extend_from_slice(x);
        self.xis.extend(u.iter().zip(x).map(|(u, x)| u - x));
    }

    fn finish(self, scheme: Scheme, gate: GateReport) -> Result<Trajectory> {
        let n = self.prob.cons.state_dim();
        let grid = self.prob.u.grid().clone();
        Ok(Trajectory {
            scheme,
            xi: PLPath::new(grid.clone(), n, self.xis)?,
            x: PLPath::new(grid, n, self.xs)?,
            steps: self.steps,
            gate,
        })
    }
}

/// `x_{k+1} = P_{Z(w_{k+1})}(x_k + du_k)`, `xi = u - x`.
pub fn solve_catching_up(prob: &SweepProblem, opts: &SolverOptions) -> Result<Trajectory> {
    let gate = prob.gate(opts.gate_factor);
    gate.check()?;
    let cons = &prob.cons;
    let n = cons.state_dim();
    let m = cons.param_dim();
    let r = cons.constants().r;
    let mut st = Stepper::new(prob, opts);
    let mut udot = vec![0.0; n];
    let mut wdot = vec![0.0; m];
    for k in 0..prob.u.grid().steps() {
        let dt = prob.u.grid().step(k);
        prob.u.slope_into(k, &mut udot);
        prob.w.slope_into(k, &mut wdot);
        let w1 = prob.w.value(k + 1);
        let du = math::sub(prob.u.value(k + 1), prob.u.value(k));
        let y = math::add_scaled(st.x(k), 1.0, &du);
        let g_pre = cons.value(&y, w1);
        let x1 = cons.project(&y, w1)?;
        st.push_node(k + 1, &x1);

        let xidot: Vec<f64> = (0..n).map(|i| (st.xi(k + 1)[i] - st.xi(k)[i]) / dt).collect();
        let xn = math::norm(&xidot);
        let dterm = drive_terms(cons, &x1, w1, &udot, &wdot, st.opts.activation_tol);
        let mut vi = 0.0;
        if st.opts.vi_samples > 0 && xn > 0.0 {
            for z in vi_test_points(cons, w1, &x1, st.opts.vi_samples, st.opts.seed, k) {
                vi = f64::min(vi, vi_term(&x1, &z, &xidot, r));
            }
        }
        let comp = if st.opts.compensator { compensator(cons, &x1, w1, &wdot)? } else { vec![0.0; n] };
        st.steps.push(StepRecord {
            active: dterm.active,
            a: dterm.a_proxy,
            b: dterm.b,
            xidot_norm: xn,
            drive_rate: vec![0.0; n],
            g_pre,
            g_post: cons.value(&x1, w1),
            vi_residual: vi,
            vi_scale: vi_scale(xn, cons.extent(w1)),
            compensator: comp,
        });
    }
    st.finish(Scheme::CatchingUp, gate)
}

/// Normal flow `xi' = (B / |grad_x G|^2) grad_x G` from active nodes with
/// `B > 0`, `xi' = 0` otherwise, followed by re-projection onto `Z(w_{k+1})`.
pub fn solve_boundary_ode(prob: &SweepProblem, opts: &SolverOptions) -> Result<Trajectory> {
    let gate = prob.gate(opts.gate_factor);
    gate.check()?;
    let cons = &prob.cons;
    let n = cons.state_dim();
    let m = cons.param_dim();
    let r = cons.constants().r;
    let mut st = Stepper::new(prob, opts);
    let mut udot = vec![0.0; n];
    let mut wdot = vec![0.0; m];
    for k in 0..prob.u.grid().steps() {
        let dt = prob.u.grid().step(k);
        prob.u.slope_into(k, &mut udot);
        prob.w.slope_into(k, &mut wdot);
        let w0 = prob.w.value(k);
        let w1 = prob.w.value(k + 1);
        let x0 = st.x(k).to_vec();
        let dterm = drive_terms(cons, &x0, w0, &udot, &wdot, st.opts.activation_tol);
        let rate = if dterm.active && dterm.b > 0.0 {
            let g = cons.grad_x(&x0, w0);
            let s = dterm.b / math::dot(&g, &g);
            g.iter().map(|v| s * v).collect()
        } else {
            vec![0.0; n]
        };
        // x_k + du - dt * rate, i.e. u_{k+1} - (xi_k + dt * rate) without the round trip through xi.
        let cand: Vec<f64> =
            (0..n).map(|i| x0[i] + (prob.u.value(k + 1)[i] - prob.u.value(k)[i]) - dt * rate[i]).collect();
        let g_pre = cons.value(&cand, w1);
        let x1 = cons.project(&cand, w1)?;
        st.push_node(k + 1, &x1);

        let xidot: Vec<f64> = (0..n).map(|i| (st.xi(k + 1)[i] - st.xi(k)[i]) / dt).collect();
        let xn = math::norm(&xidot);
        let vi = if st.opts.vi_samples > 0 && xn > 0.0 {
            boundary_ode_vi(cons, &x0, w0, &rate, &cand, &x1, w1, dt, st.opts, k, r)
        } else {
            0.0
        };
        let comp = if st.opts.compensator { compensator(cons, &x0, w0, &wdot)? } else { vec![0.0; n] };
        st.steps.push(StepRecord {
            active: dterm.active,
            a: dterm.a_proxy,
            b: dterm.b,
            xidot_norm: xn,
            drive_rate: rate,
            g_pre,
            g_post: cons.value(&x1, w1),
            vi_residual: vi,
            vi_scale: vi_scale(xn, cons.extent(w1)),
            compensator: comp,
        });
    }
    st.finish(Scheme::BoundaryOde, gate)
}

/// The boundary-flow step splits into the normal-flow slope at `x_k` and the
/// projection correction at `x_{k+1}`; each part is tested against its own set.
#[allow(clippy::too_many_arguments)]
fn boundary_ode_vi(
    cons: &LevelSetConstraint,
    x0: &[f64],
    w0: &[f64],
    rate: &[f64],
    cand: &[f64],
    x1: &[f64],
    w1: &[f64],
    dt: f64,
    opts: &SolverOptions,
    k: usize,
    r: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    if rate.iter().any(|v| *v != 0.0) {
        for z in vi_test_points(cons, w0, x0, opts.vi_samples, opts.seed, k) {
            worst = worst.min(vi_term(x0, &z, rate, r));
        }
    }
    let corr: Vec<f64> = cand.iter().zip(x1).map(|(c, x)| (c - x) / dt).collect();
    if corr.iter().any(|v| *v != 0.0) {
        for z in vi_test_points(cons, w1, x1, opts.vi_samples, opts.seed, k) {
            worst = worst.min(vi_term(x1, &z, &corr, r));
        }
    }
    worst
}

/// Worst rate-bound margin `|u'| + (K1/c)|w'| - |xi'|` over the steps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateBound {
    pub worst_margin: f64,
    /// Margin divided by `max(1, |u'| + |w'|)`.
    pub worst_scaled: f64,
    pub step: usize,
}

pub fn rate_bound_check(traj: &Trajectory, prob: &SweepProblem) -> RateBound {
    let k = prob.cons.constants();
    let ratio = k.k1 / k.c;
    let mut out = RateBound { worst_margin: f64::INFINITY, worst_scaled: f64::INFINITY, step: 0 };
    for (i, rec) in traj.steps.iter().enumerate() {
        let du = prob.u.slope_norm(i);
        let dw = prob.w.slope_norm(i);
        let margin = du + ratio * dw - rec.xidot_norm;
        let scaled = margin / (du + dw).max(1.0);
        if scaled < out.worst_scaled {
            out = RateBound { worst_margin: margin, worst_scaled: scaled, step: i };
        }
    }
    if traj.steps.is_empty() {
        out.worst_margin = 0.0;
        out.worst_scaled = 0.0;
    }
    out
}

/// Worst variational-inequality residual recorded over the steps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ViReport {
    pub worst: f64,
    /// Residual divided by the step's `vi_scale`.
    pub worst_scaled: f64,
    pub step: usize,
}

pub fn vi_residual(traj: &Trajectory) -> ViReport {
    let mut out = ViReport { worst: 0.0, worst_scaled: 0.0, step: 0 };
    for (i, rec) in traj.steps.iter().enumerate() {
        let scaled = rec.vi_residual / rec.vi_scale;
        if scaled < out.worst_scaled {
            out = ViReport { worst: rec.vi_residual, worst_scaled: scaled, step: i };
        }
    }
    out
}

/// `sum_k <xi'_k, x'_k + s_k> dt_k`, which vanishes for exact solutions.
pub fn compensator_identity_defect(traj: &Trajectory) -> f64 {
    let n = traj.x.dim();
    let grid = traj.x.grid();
    let mut xd = vec![0.0; n];
    let mut xid = vec![0.0; n];
    let mut total = 0.0;
    for (k, rec) in traj.steps.iter().enumerate() {
        traj.x.slope_into(k, &mut xd);
        traj.xi.slope_into(k, &mut xid);
        let v: Vec<f64> = (0..n).map(|i| xd[i] + rec.compensator[i]).collect();
        total += math::dot(&xid, &v) * grid.step(k);
    }
    total
}

/// Largest `G(x_k, w_k)` over the nodes.
pub fn max_level(traj: &Trajectory, prob: &SweepProblem) -> f64 {
    (0..traj.x.grid().len())
        .map(|k| prob.cons.value(traj.x.value(k), prob.w.value(k)))
        .fold(f64::NEG_INFINITY, f64::max)
}
