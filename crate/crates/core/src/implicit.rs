//! State-dependent sweeping: the parameter is fed back from the output,
//! `w(t) = g(t, u(t), xi(t))`, and the fixed point of
//! `eta -> xi[u, g(., u, eta)]` is found by Picard iteration. The map
//! contracts with factor `delta* = (delta + eps) / (1 - eps)` in the norm
//! `sum_k exp(-M(t_k)/eps) |eta'_k| dt_k`.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::constraint::LevelSetConstraint;
use crate::error::{Error, Result};
use crate::explicit::{self, Scheme, SolverOptions, SweepProblem, Trajectory};
use crate::math;
use crate::paths::{self, PLPath, WeightProfile};

/// Bounds of a feedback map: `|d_xi g| <= gamma`, `|d_u g| <= omega`, and
/// Lipschitz constants `c_xi`, `c_u` of those derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateMapConstants {
    pub gamma: f64,
    pub omega: f64,
    pub c_xi: f64,
    pub c_u: f64,
}

/// Feedback `g: [0, T] x R^n x R^n -> R^m` with partial derivatives.
/// Jacobians are row-major `m x n`.
pub trait StateMap: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eval(&self, t: f64, u: &[f64], xi: &[f64], out: &mut [f64]);
    fn d_t(&self, t: f64, u: &[f64], xi: &[f64], out: &mut [f64]);
    fn d_u(&self, t: f64, u: &[f64], xi: &[f64], out: &mut [f64]);
    fn d_xi(&self, t: f64, u: &[f64], xi: &[f64], out: &mut [f64]);
    fn constants(&self) -> StateMapConstants;
    /// `sup |d_t g|` over `[t0, t1]`: the rate function `a` on a step.
    fn time_rate_bound(&self, t0: f64, t1: f64) -> f64;
    /// Lipschitz constant of `d_t g` in `(u, xi)` over `[t0, t1]`: the rate function `b`.
    fn time_lipschitz_bound(&self, t0: f64, t1: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: Scheme,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, scheme: Scheme::CatchingUp }
    }
}

/// Differences below this are rounding noise and yield no ratio.
const RATIO_FLOOR: f64 = 1e-11;

#[derive(Clone)]
pub struct ImplicitProblem {
    pub cons: LevelSetConstraint,
    pub u: PLPath,
    pub x0: Vec<f64>,
    pub gmap: Arc<dyn StateMap>,
    pub epsilon: f64,
}

impl core::fmt::Debug for ImplicitProblem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ImplicitProblem")
            .field("cons", &self.cons)
            .field("u", &self.u)
            .field("x0", &self.x0)
            .field("gmap", &self.gmap.name())
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

/// Coefficients of the one-step difference estimate used to build the
/// weight: `m1` multiplies `|du1' - du2'|`, `m0` the rate `a + b + |u'|`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightConstants {
    pub m0: f64,
    pub m1: f64,
    pub coeff_a: f64,
    pub coeff_b: f64,
    pub coeff_u: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationReport {
    pub delta: f64,
    pub delta_star: f64,
    pub epsilon: f64,
    pub weights: WeightConstants,
    /// `log ||xi^{k+1} - xi^k||_eps` per iteration.
    pub log_weighted: Vec<f64>,
    pub plain: Vec<f64>,
    /// Weighted-norm ratios of successive differences; `None` below the noise floor.
    pub ratios: Vec<Option<f64>>,
    /// Worst `bound_k - |xi'_k|` per iterate.
    pub envelope_margins: Vec<f64>,
    pub iterations: usize,
    /// `ceil(log(tol / d1) / log(delta*)) + 2` with the first-step distance
    /// `d1` taken in the stopping metric.
    pub budget: usize,
    /// Iterations after which the weighted contraction alone forces the plain
    /// distance below `tol`: the budget for `tol e^{-M(T)/eps}` in the weighted norm.
    pub guaranteed_budget: usize,
    pub fixed_point_residual: f64,
    pub converged: bool,
    pub scheme: String,
}

impl IterationReport {
    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios.iter().flatten().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct ImplicitSolution {
    pub trajectory: Trajectory,
    /// `w = g(t, u, xi)` at the nodes of the fixed point.
    pub w: PLPath,
    pub report: IterationReport,
}

impl ImplicitProblem {
    pub fn new(
        cons: LevelSetConstraint,
        u: PLPath,
        x0: Vec<f64>,
        gmap: Arc<dyn StateMap>,
        epsilon: f64,
    ) -> Result<Self> {
        let n = cons.state_dim();
        if u.dim() != n || gmap.state_dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: if u.dim() != n { u.dim() } else { gmap.state_dim() } });
        }
        if gmap.param_dim() != cons.param_dim() {
            return Err(Error::DimensionMismatch { expected: cons.param_dim(), found: gmap.param_dim() });
        }
        if x0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
        }
        let prob = Self { cons, u, x0, gmap, epsilon };
        prob.check_contraction()?;
        let xi0 = prob.initial_xi();
        let mut w0 = vec![0.0; prob.cons.param_dim()];
        prob.gmap.eval(0.0, prob.u.initial(), &xi0, &mut w0);
        let level = prob.cons.value(&prob.x0, &w0);
        if level > 1.0 + prob.cons.options().level_tol {
            return Err(Error::InfeasibleInitialState { level });
        }
        Ok(prob)
    }

    fn initial_xi(&self) -> Vec<f64> {
        math::sub(self.u.initial(), &self.x0)
    }

    /// `(delta, delta*)` with `delta = K1 gamma / c`.
    pub fn check_contraction(&self) -> Result<(f64, f64)> {
        let k = self.cons.constants();
        let delta = k.k1 * self.gmap.constants().gamma / k.c;
        contraction_pair(delta, self.epsilon)
    }

    fn delta(&self) -> f64 {
        let k = self.cons.constants();
        k.k1 * self.gmap.constants().gamma / k.c
    }

    /// `a` and `b` on step `k` of the input grid.
    fn rates(&self, k: usize) -> (f64, f64) {
        let nodes = self.u.grid().nodes();
        let (t0, t1) = (nodes[k], nodes[k + 1]);
        (self.gmap.time_rate_bound(t0, t1), self.gmap.time_lipschitz_bound(t0, t1))
    }

    /// Slope bound of the admissible envelope on step `k`:
    /// `((1 + omega K1/c) |u'| + (K1/c) a) / (1 - delta)`.
    pub fn envelope_bound(&self, k: usize) -> f64 {
        let kc = self.cons.constants();
        let q = kc.k1 / kc.c;
        let omega = self.gmap.constants().omega;
        let (a, _) = self.rates(k);
        ((1.0 + omega * q) * self.u.slope_norm(k) + q * a) / (1.0 - self.delta())
    }

    pub fn weight_constants(&self) -> WeightConstants {
        weight_constants(self.cons.constants(), &self.gmap.constants())
    }

    /// `M(t) = int_0^t m0 (a + b + |u'|)`.
    pub fn weight_profile(&self) -> Result<WeightProfile> {
        let m0 = self.weight_constants().m0;
        let grid = self.u.grid().clone();
        let mut vals = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        vals.push(0.0);
        for k in 0..grid.steps() {
            let (a, b) = self.rates(k);
            acc += m0 * (a + b + self.u.slope_norm(k)) * grid.step(k);
            vals.push(acc);
        }
        WeightProfile::new(self.epsilon, PLPath::new(grid, 1, vals)?)
    }

    /// `w_k = g(t_k, u_k, eta_k)` on the nodes of the input grid.
    pub fn feedback_path(&self, eta: &PLPath) -> Result<PLPath> {
        let grid = self.u.grid().clone();
        let eta = if eta.grid() == &grid { eta.clone() } else { eta.resample(&grid) };
        let m = self.cons.param_dim();
        let mut vals = vec![0.0; grid.len() * m];
        for (k, &t) in grid.nodes().iter().enumerate() {
            self.gmap.eval(t, self.u.value(k), eta.value(k), &mut vals[k * m..(k + 1) * m]);
        }
        PLPath::new(grid, m, vals)
    }

    /// One application of the iteration map `eta -> xi`.
    pub fn apply(&self, eta: &PLPath, scheme: Scheme, opts: &SolverOptions) -> Result<(Trajectory, PLPath)> {
        let w = self.feedback_path(eta)?;
        let sp = SweepProblem::new(self.cons.clone(), self.u.clone(), w.clone(), self.x0.clone())?;
        Ok((explicit::solve(&sp, scheme, opts)?, w))
    }

    /// Worst `bound_k - |eta'_k|`, with `1e-9 * max(1, bound_k)` slack for rounding.
    pub fn envelope_margin(&self, eta: &PLPath) -> f64 {
        (0..self.u.grid().steps())
            .map(|k| {
                let bound = self.envelope_bound(k);
                bound - eta.slope_norm(k) + 1e-9 * bound.max(1.0)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Constant path `u(0) - x0`.
    pub fn trivial_iterate(&self) -> PLPath {
        PLPath::constant(self.u.grid().clone(), &self.initial_xi())
    }
}

/// `(delta, (delta + eps) / (1 - eps))`, rejecting non-contractive values.
pub fn contraction_pair(delta: f64, epsilon: f64) -> Result<(f64, f64)> {
    if !(delta < 1.0) {
        return Err(Error::NotAContraction { delta });
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidEpsilon { epsilon, delta_star: f64::NAN });
    }
    let delta_star = (delta + epsilon) / (1.0 - epsilon);
    if !(delta_star < 1.0) {
        return Err(Error::InvalidEpsilon { epsilon, delta_star });
    }
    Ok((delta, delta_star))
}

/// Conservative `m0`, `m1` from the constraint and feedback constants:
/// differences of drive terms, of `w'` and of `w` are bounded through the
/// gradient bounds and the envelope slopes
/// `|w'| <= (1 + delta/(1-delta)) a + (omega + gamma (1 + omega K1/c)/(1-delta)) |u'|` and
/// `|eta'| <= ((1 + omega K1/c) |u'| + (K1/c) a) / (1 - delta)`.
pub fn weight_constants(k: &crate::constraint::ConstantsBundle, g: &StateMapConstants) -> WeightConstants {
    let q = k.k1 / k.c;
    let delta = q * g.gamma;
    let inv = 1.0 / (1.0 - delta);
    let alpha_a = 1.0 + delta * inv;
    let alpha_u = g.omega + g.gamma * (1.0 + g.omega * q) * inv;
    let beta_u = (1.0 + g.omega * q) * inv;
    let beta_a = q * inv;
    let p = (1.0 + g.omega).max(g.gamma);
    let qq = k.c1 + k.c0 * q;
    let coeff_a = q * g.c_xi * beta_a + qq * alpha_a * p / k.c;
    let coeff_b = q;
    let coeff_u = q * (g.c_u + g.c_xi * beta_u) + (2.0 * k.c0 + qq * alpha_u) * p / k.c;
    WeightConstants {
        m0: coeff_a.max(coeff_b).max(coeff_u),
        m1: (k.k0 + k.k1 * g.omega) / k.c,
        coeff_a,
        coeff_b,
        coeff_u,
    }
}

pub fn solve_picard(
    prob: &ImplicitProblem,
    opts: &PicardOptions,
    solver: &SolverOptions,
) -> Result<ImplicitSolution> {
    solve_picard_from(prob, prob.trivial_iterate(), opts, solver)
}

/// Picard iteration started from `init`, which must start at `u(0) - x0`.
pub fn solve_picard_from(
    prob: &ImplicitProblem,
    init: PLPath,
    opts: &PicardOptions,
    solver: &SolverOptions,
) -> Result<ImplicitSolution> {
    let (delta, delta_star) = prob.check_contraction()?;
    if math::dist(init.initial(), &prob.initial_xi()) > 1e-12 * (1.0 + math::norm(&prob.initial_xi())) {
        return Err(Error::InvalidParameter("initial iterate must start at u(0) - x0".into()));
    }
    let wp = prob.weight_profile()?;
    // Weights lie in [e^{-M(T)/eps}, 1], so plain <= e^{M(T)/eps} * weighted.
    let log_spread = wp.cumulative().last()[0] / wp.epsilon();
    let mut report = IterationReport {
        delta,
        delta_star,
        epsilon: prob.epsilon,
        weights: prob.weight_constants(),
        log_weighted: Vec::new(),
        plain: Vec::new(),
        ratios: Vec::new(),
        envelope_margins: Vec::new(),
        iterations: 0,
        budget: 0,
        guaranteed_budget: 0,
        fixed_point_residual: f64::NAN,
        converged: false,
        scheme: alloc::format!("{:?}", opts.scheme),
    };

    let mut eta = init.resample(prob.u.grid());
    let mut prev_log: Option<f64> = None;
    for it in 0..opts.max_iter {
        let (traj, w) = prob.apply(&eta, opts.scheme, solver)?;
        let next = traj.xi.clone();
        let plain = paths::w11_distance(&next, &eta)?;
        let lw = paths::log_weighted_distance(&next, &eta, &wp)?;
        report.envelope_margins.push(prob.envelope_margin(&next));
        report.plain.push(plain);
        report.log_weighted.push(lw);
        report.iterations = it + 1;
        if it == 0 {
            report.budget = geometric_budget(math::ln(opts.tol) - math::ln(plain), delta_star);
            report.guaranteed_budget =
                geometric_budget(math::ln(opts.tol) - log_spread - lw, delta_star);
        }
        let above_floor = plain > RATIO_FLOOR;
        let ratio = match prev_log {
            Some(p) if above_floor => Some(math::exp(lw - p)),
            _ => None,
        };
        if it > 0 {
            report.ratios.push(ratio);
        }
        prev_log = above_floor.then_some(lw);

        if plain <= opts.tol {
            let (check, _) = prob.apply(&next, opts.scheme, solver)?;
            report.fixed_point_residual = paths::w11_distance(&check.xi, &next)?;
            report.converged = true;
            return Ok(ImplicitSolution { trajectory: traj, w, report });
        }
        eta = next;
    }
    Err(Error::MaxIterExceeded {
        iterations: opts.max_iter,
        last_distance: report.plain.last().copied().unwrap_or(f64::NAN),
    })
}

/// Steps of a geometric series with ratio `q` needed to shrink by `e^{log_factor}`, plus 2.
fn geometric_budget(log_factor: f64, q: f64) -> usize {
    if log_factor >= 0.0 {
        2
    } else {
        math::ceil(log_factor / math::ln(q)) as usize + 2
    }
}

/// Conservative Lipschitz constant of `u -> xi` for the implicit problem:
/// `K(R) = e^{R/eps} max(m1 + eps, C') / (1 - delta - eps)` with
/// `R = 2 m0 int (a + b + |u'|)` and `C'` collecting the initial-gap terms.
pub fn implicit_lipschitz_constant(prob: &ImplicitProblem, epsilon: f64) -> Result<f64> {
    Ok(math::exp(implicit_lipschitz_log_constant(prob, epsilon)?))
}

/// `ln K(R)`, finite where `K(R)` itself overflows.
pub fn implicit_lipschitz_log_constant(prob: &ImplicitProblem, epsilon: f64) -> Result<f64> {
    let delta = prob.delta();
    if !(epsilon > 0.0 && epsilon < 1.0 - delta) {
        return Err(Error::InvalidEpsilon { epsilon, delta_star: (delta + epsilon) / (1.0 - epsilon) });
    }
    let wc = prob.weight_constants();
    let k = prob.cons.constants();
    let g = prob.gmap.constants();
    let grid = prob.u.grid();
    let mut r = 0.0;
    for s in 0..grid.steps() {
        let (a, b) = prob.rates(s);
        r += 2.0 * wc.m0 * (a + b + prob.u.slope_norm(s)) * grid.step(s);
    }
    let c_init = ((k.k0 + k.k1 * g.gamma) / k.c + epsilon).max(k.k1 * (g.omega + g.gamma) / k.c + 2.0 * epsilon);
    Ok(r / epsilon + math::ln((wc.m1 + epsilon).max(c_init) / (1.0 - delta - epsilon)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{make_scalar_play, LinearFeedback};
    use crate::paths::{sup_distance, w11_distance, TimeGrid};

    fn implicit_play(n: usize, gamma: f64) -> ImplicitProblem {
        let g = TimeGrid::uniform(1.0, n).unwrap();
        let u = PLPath::from_fn(g, 1, |t, o| o[0] = 2.0 * t);
        let map = LinearFeedback::constant(vec![0.0], vec![gamma], vec![0.0], 1).unwrap();
        ImplicitProblem::new(make_scalar_play(1.0).unwrap(), u, vec![0.0], Arc::new(map), 0.1).unwrap()
    }

    #[test]
    fn contraction_arithmetic() {
        let d = crate::certify::contraction_delta(2.0, 0.4, 1.0);
        assert!((d - 0.8).abs() < 1e-15);
        // delta* = 0.9 / 0.9 is not a contraction.
        assert!(matches!(contraction_pair(d, 0.1), Err(Error::InvalidEpsilon { .. })));
        let (_, ds) = contraction_pair(d, 0.05).unwrap();
        assert!((ds - 0.85 / 0.95).abs() < 1e-15);
        let (d, ds) = contraction_pair(0.0, 0.1).unwrap();
        assert_eq!(d, 0.0);
        assert!((ds - 0.1 / 0.9).abs() < 1e-15);
        let (_, ds) = contraction_pair(0.5, 0.1).unwrap();
        assert!((ds - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(contraction_pair(1.0, 0.1), Err(Error::NotAContraction { .. })));
        assert!(matches!(contraction_pair(0.8, 0.2), Err(Error::InvalidEpsilon { .. })));
    }

    #[test]
    fn envelope_plug_in() {
        // delta = 0.5, omega = 0, K1/c = 1, |u'| = 1, a = 0 gives 2.
        let k = crate::constraint::ConstantsBundle::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, None).unwrap();
        let cons = make_scalar_play(1.0).unwrap().with_constants(k);
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let u = PLPath::from_fn(g, 1, |t, o| o[0] = t);
        let map = LinearFeedback::constant(vec![0.0], vec![0.5], vec![0.0], 1).unwrap();
        let p = ImplicitProblem::new(cons, u, vec![0.0], Arc::new(map), 0.1).unwrap();
        assert!((p.envelope_bound(0) - 2.0).abs() < 1e-15);

        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let p = implicit_play(4, 0.2);
        let still = ImplicitProblem { u: PLPath::constant(g, &[0.0]), ..p };
        assert_eq!(still.envelope_bound(2), 0.0);
    }

    #[test]
    fn weight_profile_examples() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let p = implicit_play(10, 0.2);
        let still = ImplicitProblem { u: PLPath::constant(g, &[0.0]), ..p.clone() };
        let wp = still.weight_profile().unwrap();
        assert!(wp.cumulative().values().iter().all(|v| *v == 0.0));

        let wp = p.weight_profile().unwrap();
        let m0 = p.weight_constants().m0;
        assert!((wp.cumulative().last()[0] - 2.0 * m0).abs() < 1e-12);
        assert!(wp.cumulative().values().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn feedback_free_map_converges_after_one_correction() {
        let p = implicit_play(50, 0.0);
        let sol = solve_picard(&p, &PicardOptions::default(), &SolverOptions::default()).unwrap();
        assert_eq!(sol.report.iterations, 2);
        assert_eq!(sol.report.plain[1], 0.0);
    }

    #[test]
    fn implicit_play_matches_closed_form() {
        let gamma = 0.3;
        let p = implicit_play(2000, gamma);
        let opts = PicardOptions { tol: 1e-10, ..PicardOptions::default() };
        let solver = SolverOptions { vi_samples: 8, compensator: false, ..SolverOptions::default() };
        let sol = solve_picard(&p, &opts, &solver).unwrap();
        // Contact at t = 1/2, then xi (1 + gamma) = u - rho.
        let exact = PLPath::from_fn(p.u.grid().clone(), 1, |t, o| {
            o[0] = if t <= 0.5 { 0.0 } else { (2.0 * t - 1.0) / (1.0 + gamma) }
        });
        assert!(sup_distance(&sol.trajectory.xi, &exact).unwrap() < 1e-9);
        assert!(sol.report.fixed_point_residual <= 2.0 * opts.tol);
        assert!(sol.report.envelope_margins.iter().all(|m| *m >= 0.0));
        assert!(sol.report.iterations <= sol.report.budget);
        assert!(sol.report.budget <= sol.report.guaranteed_budget);
        for r in sol.report.ratios.iter().flatten() {
            assert!(*r <= sol.report.delta_star + 0.05);
        }
    }

    #[test]
    fn different_starts_reach_the_same_fixed_point() {
        let p = implicit_play(400, 0.25);
        let opts = PicardOptions::default();
        let solver = SolverOptions { vi_samples: 0, compensator: false, ..SolverOptions::default() };
        let a = solve_picard(&p, &opts, &solver).unwrap();
        let bound0 = p.envelope_bound(0);
        let alt = PLPath::from_fn(p.u.grid().clone(), 1, |t, o| o[0] = 0.5 * bound0 * math::sin(3.0 * t).abs().min(t));
        let b = solve_picard_from(&p, alt, &opts, &solver).unwrap();
        assert!(w11_distance(&a.trajectory.xi, &b.trajectory.xi).unwrap() <= 10.0 * opts.tol);
    }

    #[test]
    fn non_contractive_feedback_is_refused() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let u = PLPath::constant(g, &[0.0]);
        let map = LinearFeedback::constant(vec![0.0], vec![5.0], vec![0.0], 1).unwrap();
        let r = ImplicitProblem::new(make_scalar_play(1.0).unwrap(), u, vec![0.0], Arc::new(map), 0.1);
        assert!(matches!(r, Err(Error::NotAContraction { .. })));
    }
}
