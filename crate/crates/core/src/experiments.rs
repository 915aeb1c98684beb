//! Empirical stability studies: output distance against input distance
//! under shrinking perturbations, and convergence order against oracles.
//! Every study is deterministic given its seed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::explicit::{self, Scheme, SolverOptions, SweepProblem, Trajectory};
use crate::implicit::{self, ImplicitProblem, PicardOptions};
use crate::math::{self, Sampler};
use crate::paths::{self, PLPath};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyConfig {
    /// Strictly decreasing, positive.
    pub scales: Vec<f64>,
    pub seed: u64,
    pub scheme: Scheme,
    pub solver: SolverOptions,
    /// Perturb the parameter path as well as the input (explicit studies only).
    pub perturb_w: bool,
}

impl StudyConfig {
    pub fn new(scales: Vec<f64>, seed: u64) -> Result<Self> {
        let cfg = Self { scales, seed, scheme: Scheme::CatchingUp, solver: SolverOptions::default(), perturb_w: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidParameter("at least one perturbation scale is required".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("perturbation scales must be positive and finite".into()));
        }
        if self.scales.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("perturbation scales must be strictly decreasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyRow {
    pub scale: f64,
    /// Right-hand side: input path distances plus initial gaps.
    pub input_distance: f64,
    /// W11 distance of the outputs.
    pub output_distance: f64,
    /// `output / input`; absent when the input distance is zero or a solve failed.
    pub ratio: Option<f64>,
    /// Worst per-step margin of the local difference estimate (Lipschitz study only).
    pub pointwise_margin: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyResult {
    pub kind: String,
    pub rows: Vec<StudyRow>,
    /// Discretization floor of the base problem (continuity study).
    pub floor: Option<f64>,
    /// Conservative assembled constant the ratios are compared against, if any.
    /// It can overflow to infinity; `log_bound` keeps its logarithm.
    pub bound: Option<f64>,
    pub log_bound: Option<f64>,
    pub passed: bool,
    pub detail: String,
}

impl StudyResult {
    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.ratio).collect()
    }

    /// `max / min` of the recorded ratios.
    pub fn ratio_spread(&self) -> Option<f64> {
        let r = self.ratios();
        if r.is_empty() {
            return None;
        }
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        Some(hi / lo)
    }
}

/// Seeded shape `sum_j v_j sin(pi f_j t / T)` with unit-scale amplitudes; it
/// vanishes at `t = 0` so initial data and feasibility are untouched.
pub fn perturbation_shape(grid: &paths::TimeGrid, dim: usize, seed: u64, stream: u64) -> PLPath {
    let mut s = Sampler::new(seed, stream);
    let modes: Vec<(Vec<f64>, f64)> = (0..2)
        .map(|_| {
            let v = s.unit_vector(dim);
            let f = math::ceil(3.0 * s.uniform()).max(1.0);
            (v, f)
        })
        .collect();
    let t_end = grid.t_end();
    PLPath::from_fn(grid.clone(), dim, |t, o| {
        o.fill(0.0);
        for (v, f) in &modes {
            let a = math::sin(core::f64::consts::PI * f * t / t_end);
            for (oi, vi) in o.iter_mut().zip(v) {
                *oi += 0.5 * a * vi;
            }
        }
    })
}

fn perturbed(base: &SweepProblem, scale: f64, du: &PLPath, dw: &PLPath, perturb_w: bool) -> Result<SweepProblem> {
    let u = base.u.add_scaled(scale, du)?;
    let w = if perturb_w { base.w.add_scaled(scale, dw)? } else { base.w.clone() };
    SweepProblem::new(base.cons.clone(), u, w, base.x0.clone())
}

fn explicit_rhs(a: &SweepProblem, b: &SweepProblem) -> Result<f64> {
    Ok(paths::w11_distance(&a.u, &b.u)? - math::dist(a.u.initial(), b.u.initial())
        + paths::w11_distance(&a.w, &b.w)?
        + math::dist(a.x0.as_slice(), b.x0.as_slice()))
}

fn shapes(base: &SweepProblem, seed: u64) -> (PLPath, PLPath) {
    let grid = base.u.grid();
    (perturbation_shape(grid, base.u.dim(), seed, 1), perturbation_shape(grid, base.w.dim(), seed, 2))
}

fn error_row(scale: f64, e: Error) -> StudyRow {
    StudyRow {
        scale,
        input_distance: f64::NAN,
        output_distance: f64::NAN,
        ratio: None,
        pointwise_margin: None,
        error: Some(format!("{e}")),
    }
}

fn ratio_of(out: f64, inp: f64) -> Option<f64> {
    (inp > 0.0).then(|| out / inp)
}

/// Same inputs on the grid with every step split at its midpoint.
pub fn halved(p: &SweepProblem) -> Result<SweepProblem> {
    let nodes = p.u.grid().nodes();
    let mut fine = Vec::with_capacity(2 * nodes.len());
    for w in nodes.windows(2) {
        fine.push(w[0]);
        fine.push(0.5 * (w[0] + w[1]));
    }
    fine.push(p.u.grid().t_end());
    let grid = paths::TimeGrid::new(fine)?;
    SweepProblem::new(p.cons.clone(), p.u.resample(&grid), p.w.resample(&grid), p.x0.clone())
}

/// Output distances under perturbations shrinking to zero. Passes when they
/// decrease monotonically and the last lies below ten times the discretization
/// floor: the larger of the cross-scheme gap and the gap to the same scheme on
/// the halved grid.
pub fn continuity_study(base: &SweepProblem, cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let reference = explicit::solve(base, cfg.scheme, &cfg.solver)?;
    let other = match cfg.scheme {
        Scheme::CatchingUp => Scheme::BoundaryOde,
        Scheme::BoundaryOde => Scheme::CatchingUp,
    };
    let scheme_gap = paths::w11_distance(&reference.xi, &explicit::solve(base, other, &cfg.solver)?.xi)?;
    // Schemes can agree exactly (the scalar play); the refinement gap then sets the floor.
    let refined = explicit::solve(&halved(base)?, cfg.scheme, &cfg.solver)?;
    let floor = scheme_gap.max(paths::w11_distance(&reference.xi, &refined.xi)?);
    let (du, dw) = shapes(base, cfg.seed);
    let rows: Vec<StudyRow> = cfg
        .scales
        .iter()
        .map(|&s| {
            let run = || -> Result<StudyRow> {
                let p = perturbed(base, s, &du, &dw, cfg.perturb_w)?;
                let t = explicit::solve(&p, cfg.scheme, &cfg.solver)?;
                let input = explicit_rhs(base, &p)?;
                let output = paths::w11_distance(&reference.xi, &t.xi)?;
                Ok(StudyRow { scale: s, input_distance: input, output_distance: output, ratio: ratio_of(output, input), pointwise_margin: None, error: None })
            };
            run().unwrap_or_else(|e| error_row(s, e))
        })
        .collect();
    let failed = rows.iter().any(|r| r.error.is_some());
    let monotone = rows.windows(2).all(|w| w[1].output_distance < w[0].output_distance);
    let last = rows.last().map(|r| r.output_distance).unwrap_or(f64::NAN);
    let passed = !failed && monotone && last < 10.0 * floor;
    let detail = format!(
        "monotone={monotone}, last output {last:.3e} vs 10 x floor {:.3e}{}",
        10.0 * floor,
        if failed { ", some scales failed" } else { "" }
    );
    Ok(StudyResult { kind: "continuity".into(), rows, floor: Some(floor), bound: None, log_bound: None, passed, detail })
}

/// Worst per-step margin of
/// `c |dxi'| + (d/dt)|G1 - G2| <= K0 |du'| + K1 |dw'| + (2 C0 |u1'| + (C1 + C0 K1/c) |w1'|)(|dw| + |dx|)`
/// with `Gi = G(xi, wi)`, the time derivative as a forward difference and node
/// differences taken as the larger of the two step ends; scaled by
/// `max(1, |u1'| + |w1'|)`.
pub fn pointwise_margin(p1: &SweepProblem, t1: &Trajectory, p2: &SweepProblem, t2: &Trajectory) -> Result<f64> {
    let k = p1.cons.constants();
    let (xi1, xi2) = paths::refine_to_common_grid(&t1.xi, &t2.xi)?;
    let grid = xi1.grid().clone();
    let (u1, u2) = (p1.u.resample(&grid), p2.u.resample(&grid));
    let (w1, w2) = (p1.w.resample(&grid), p2.w.resample(&grid));
    let (x1, x2) = (t1.x.resample(&grid), t2.x.resample(&grid));
    let (n, m) = (u1.dim(), w1.dim());
    let mut s = [vec![0.0; n], vec![0.0; n], vec![0.0; m], vec![0.0; m], vec![0.0; n], vec![0.0; n]];
    let mut worst = f64::INFINITY;
    for j in 0..grid.steps() {
        u1.slope_into(j, &mut s[0]);
        u2.slope_into(j, &mut s[1]);
        w1.slope_into(j, &mut s[2]);
        w2.slope_into(j, &mut s[3]);
        xi1.slope_into(j, &mut s[4]);
        xi2.slope_into(j, &mut s[5]);
        let du = math::dist(&s[0], &s[1]);
        let dw = math::dist(&s[2], &s[3]);
        let dxi = math::dist(&s[4], &s[5]);
        let (nu, nw) = (math::norm(&s[0]), math::norm(&s[2]));
        let gap_w = math::dist(w1.value(j), w2.value(j)).max(math::dist(w1.value(j + 1), w2.value(j + 1)));
        let gap_x = math::dist(x1.value(j), x2.value(j)).max(math::dist(x1.value(j + 1), x2.value(j + 1)));
        let rhs = k.k0 * du + k.k1 * dw + (2.0 * k.c0 * nu + (k.c1 + k.c0 * k.k1 / k.c) * nw) * (gap_w + gap_x);
        let level_gap = |i: usize| math::abs(p1.cons.value(x1.value(i), w1.value(i)) - p1.cons.value(x2.value(i), w2.value(i)));
        let level_rate = (level_gap(j + 1) - level_gap(j)) / grid.step(j);
        let margin = (rhs - k.c * dxi - level_rate) / (1.0f64).max(nu + nw);
        worst = worst.min(margin);
    }
    Ok(worst)
}

/// Ratios of output distance to input distance plus initial gaps. Passes when
/// the ratios across scales stay within a factor 4 of each other.
pub fn lipschitz_study(base: &SweepProblem, cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let reference = explicit::solve(base, cfg.scheme, &cfg.solver)?;
    let (du, dw) = shapes(base, cfg.seed);
    let rows: Vec<StudyRow> = cfg
        .scales
        .iter()
        .map(|&s| {
            let run = || -> Result<StudyRow> {
                let p = perturbed(base, s, &du, &dw, cfg.perturb_w)?;
                let t = explicit::solve(&p, cfg.scheme, &cfg.solver)?;
                let input = explicit_rhs(base, &p)?;
                let output = paths::w11_distance(&reference.xi, &t.xi)?;
                let margin = pointwise_margin(base, &reference, &p, &t)?;
                Ok(StudyRow { scale: s, input_distance: input, output_distance: output, ratio: ratio_of(output, input), pointwise_margin: Some(margin), error: None })
            };
            run().unwrap_or_else(|e| error_row(s, e))
        })
        .collect();
    Ok(spread_verdict("lipschitz", rows, None))
}

fn spread_verdict(kind: &str, rows: Vec<StudyRow>, bound: Option<f64>) -> StudyResult {
    let failed = rows.iter().any(|r| r.error.is_some());
    let mut res = StudyResult { kind: kind.into(), rows, floor: None, bound, log_bound: None, passed: false, detail: String::new() };
    let spread = res.ratio_spread();
    let under_bound = bound.is_none_or(|b| res.ratios().iter().all(|r| *r <= b));
    res.passed = !failed && spread.is_some_and(|s| s <= 4.0) && under_bound;
    res.detail = format!(
        "ratio spread {}{}{}",
        spread.map_or("n/a".into(), |s| format!("{s:.3}")),
        bound.map_or(String::new(), |b| format!(", assembled bound {b:.3e}, all below: {under_bound}")),
        if failed { ", some scales failed" } else { "" }
    );
    res
}

/// Implicit counterpart of the Lipschitz study: only `u` is perturbed and the
/// ratios are also compared with the assembled constant `K(R)`.
pub fn implicit_lipschitz_study(base: &ImplicitProblem, cfg: &StudyConfig, picard: &PicardOptions) -> Result<StudyResult> {
    cfg.validate()?;
    let eps_k = 0.5 * (1.0 - base.check_contraction()?.0);
    let log_bound = implicit::implicit_lipschitz_log_constant(base, eps_k)?;
    let reference = implicit::solve_picard(base, picard, &cfg.solver)?;
    let du = perturbation_shape(base.u.grid(), base.u.dim(), cfg.seed, 1);
    let rows: Vec<StudyRow> = cfg
        .scales
        .iter()
        .map(|&s| {
            let run = || -> Result<StudyRow> {
                let u = base.u.add_scaled(s, &du)?;
                let p = ImplicitProblem::new(base.cons.clone(), u, base.x0.clone(), base.gmap.clone(), base.epsilon)?;
                let sol = implicit::solve_picard(&p, picard, &cfg.solver)?;
                let input = paths::w11_distance(&base.u, &p.u)? + math::dist(&base.x0, &p.x0);
                let output = paths::w11_distance(&reference.trajectory.xi, &sol.trajectory.xi)?;
                Ok(StudyRow { scale: s, input_distance: input, output_distance: output, ratio: ratio_of(output, input), pointwise_margin: None, error: None })
            };
            run().unwrap_or_else(|e| error_row(s, e))
        })
        .collect();
    let mut res = spread_verdict("implicit", rows, Some(math::exp(log_bound)));
    res.log_bound = Some(log_bound);
    res.detail = format!("{}, ln K(R) = {log_bound:.3}", res.detail);
    Ok(res)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrderStudy {
    pub steps: Vec<usize>,
    pub sup_errors: Vec<f64>,
    pub w11_errors: Vec<f64>,
    /// `log2(e(h) / e(h/2))` between consecutive grids; `None` when an error is zero.
    pub sup_orders: Vec<Option<f64>>,
    pub w11_orders: Vec<Option<f64>>,
    pub passed: bool,
}

pub enum Oracle<'a> {
    /// Exact `xi` for a given discretized problem.
    Exact(&'a dyn Fn(&SweepProblem) -> Result<PLPath>),
    /// Reference solve of the same problem family at this many steps.
    Reference(usize),
}

fn orders(e: &[f64]) -> Vec<Option<f64>> {
    e.windows(2)
        .map(|w| (w[0] > 0.0 && w[1] > 0.0).then(|| math::ln(w[0] / w[1]) / core::f64::consts::LN_2))
        .collect()
}

/// Errors of `xi` at each grid size against the oracle. Passes when every
/// sup-norm order is at least 0.9, or when all errors vanish to rounding.
pub fn convergence_order_study(
    build: &dyn Fn(usize) -> Result<SweepProblem>,
    oracle: &Oracle<'_>,
    steps: &[usize],
    scheme: Scheme,
    opts: &SolverOptions,
) -> Result<OrderStudy> {
    if steps.len() < 2 || steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("grid sizes must be increasing, at least two".into()));
    }
    let reference = match oracle {
        Oracle::Reference(n) => Some(explicit::solve(&build(*n)?, scheme, opts)?.xi),
        Oracle::Exact(_) => None,
    };
    let mut sup_errors = Vec::with_capacity(steps.len());
    let mut w11_errors = Vec::with_capacity(steps.len());
    for &n in steps {
        let p = build(n)?;
        let xi = explicit::solve(&p, scheme, opts)?.xi;
        let exact = match (oracle, &reference) {
            (Oracle::Exact(f), _) => f(&p)?,
            (_, Some(r)) => r.clone(),
            _ => unreachable!(),
        };
        sup_errors.push(paths::sup_distance(&xi, &exact)?);
        w11_errors.push(paths::w11_distance(&xi, &exact)?);
    }
    let sup_orders = orders(&sup_errors);
    let w11_orders = orders(&w11_errors);
    let negligible = sup_errors.iter().all(|e| *e <= 1e-12);
    let passed = negligible || sup_orders.iter().all(|o| o.is_some_and(|o| o >= 0.9));
    Ok(OrderStudy { steps: steps.to_vec(), sup_errors, w11_errors, sup_orders, w11_orders, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{self, make_moving_ball};
    use crate::paths::TimeGrid;

    fn play_oracle_xi(p: &SweepProblem) -> Result<PLPath> {
        Ok(library::play_oracle(&p.u, &p.w, 1.0, p.x0[0])?.1)
    }

    fn fast() -> SolverOptions {
        SolverOptions { vi_samples: 0, ..SolverOptions::default() }
    }

    #[test]
    fn config_validation() {
        assert!(StudyConfig::new(vec![1e-1, 1e-2], 1).is_ok());
        assert!(StudyConfig::new(vec![1e-2, 1e-1], 1).is_err());
        assert!(StudyConfig::new(vec![1e-2, 1e-2], 1).is_err());
        assert!(StudyConfig::new(vec![0.0], 1).is_err());
        assert!(StudyConfig::new(vec![], 1).is_err());
    }

    #[test]
    fn perturbation_vanishes_at_start_and_is_deterministic() {
        let g = TimeGrid::uniform(1.0, 50).unwrap();
        let a = perturbation_shape(&g, 3, 9, 1);
        let b = perturbation_shape(&g, 3, 9, 1);
        assert_eq!(a, b);
        assert!(a.initial().iter().all(|v| *v == 0.0));
        assert!(a.w11_seminorm() > 0.1);
    }

    #[test]
    fn zero_perturbation_gives_zero_output_distance() {
        let base = library::play_ramp(100).unwrap();
        let t = explicit::solve(&base, Scheme::CatchingUp, &fast()).unwrap();
        let (du, dw) = shapes(&base, 3);
        let same = perturbed(&base, 0.0, &du, &dw, true).unwrap();
        let t2 = explicit::solve(&same, Scheme::CatchingUp, &fast()).unwrap();
        assert_eq!(paths::w11_distance(&t.xi, &t2.xi).unwrap(), 0.0);
        assert_eq!(explicit_rhs(&base, &same).unwrap(), 0.0);
        assert!(ratio_of(0.0, 0.0).is_none());
    }

    #[test]
    fn continuity_on_scalar_play() {
        let base = library::play_ramp(400).unwrap();
        let cfg = StudyConfig { solver: fast(), ..StudyConfig::new(vec![1e-1, 1e-2, 1e-3, 1e-4], 5).unwrap() };
        let r = continuity_study(&base, &cfg).unwrap();
        assert!(r.passed, "{}", r.detail);
        // Output distance scales like the perturbation.
        let c: Vec<f64> = r.rows.iter().map(|row| row.output_distance / row.scale).collect();
        let (hi, lo) = c.iter().fold((0.0f64, f64::INFINITY), |(h, l), v| (h.max(*v), l.min(*v)));
        assert!(hi / lo < 4.0, "{c:?}");
        for row in &r.rows {
            assert_eq!(row.ratio, Some(row.output_distance / row.input_distance));
        }
    }

    #[test]
    fn lipschitz_on_scalar_play_is_deterministic() {
        let base = library::play_ramp(400).unwrap();
        let cfg = StudyConfig { solver: fast(), ..StudyConfig::new(vec![1e-2, 5e-3, 2.5e-3, 1.25e-3], 11).unwrap() };
        let a = lipschitz_study(&base, &cfg).unwrap();
        let b = lipschitz_study(&base, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.passed, "{}", a.detail);
        assert!(a.rows.iter().all(|r| r.input_distance >= 0.0 && r.output_distance >= 0.0));
    }

    #[test]
    fn interior_affine_input_is_exact_at_every_grid() {
        let build = |n: usize| {
            let g = TimeGrid::uniform(1.0, n)?;
            let u = PLPath::from_fn(g.clone(), 2, |t, o| {
                o[0] = 0.3 * t;
                o[1] = -0.2 * t;
            });
            SweepProblem::new(make_moving_ball(2, 1.0)?, u, PLPath::constant(g, &[0.0, 0.0]), vec![0.0, 0.0])
        };
        let exact = |p: &SweepProblem| Ok(PLPath::constant(p.u.grid().clone(), &[0.0, 0.0]));
        let r = convergence_order_study(&build, &Oracle::Exact(&exact), &[10, 20, 40], Scheme::CatchingUp, &fast()).unwrap();
        assert!(r.sup_errors.iter().all(|e| *e == 0.0));
        assert!(r.passed);
    }

    #[test]
    fn play_ramp_has_first_order() {
        let build = |n: usize| library::play_ramp(n);
        let r = convergence_order_study(&build, &Oracle::Exact(&play_oracle_xi), &[100, 200, 400], Scheme::CatchingUp, &fast()).unwrap();
        assert!(r.passed, "{r:?}");
        for o in r.sup_orders.iter().flatten() {
            assert!((0.9..=1.5).contains(o), "{o}");
        }
    }

    #[test]
    fn implicit_study_on_identical_inputs_is_zero() {
        let base = library::implicit_play(100, 0.3, 0.1).unwrap();
        let picard = PicardOptions::default();
        let a = implicit::solve_picard(&base, &picard, &fast()).unwrap();
        let b = implicit::solve_picard(&base.clone(), &picard, &fast()).unwrap();
        assert_eq!(paths::w11_distance(&a.trajectory.xi, &b.trajectory.xi).unwrap(), 0.0);
    }
}
