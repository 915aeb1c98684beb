//! Built-in constraint families, state maps, oracles and benchmark problems.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::certify::{self, CertifyOptions};
use crate::constraint::{ConstantsBundle, LevelSet, LevelSetConstraint};
use crate::error::{Error, Result};
use crate::explicit::SweepProblem;
use crate::implicit::{ImplicitProblem, StateMap, StateMapConstants};
use crate::math;
use crate::paths::{PLPath, TimeGrid};

/// Default `lambda` for convex families, keeping `r = c / lambda` finite.
pub const LAMBDA_FLOOR: f64 = 1e-6;

/// C² monotone saturation: identity on `[0, 2]`, constant `3` on `[4, inf)`.
pub fn saturate(s: f64) -> f64 {
    if s <= 2.0 {
        s
    } else if s >= 4.0 {
        3.0
    } else {
        let t = 0.5 * (s - 2.0);
        2.0 + 2.0 * (t - t * t * t + 0.5 * t * t * t * t)
    }
}

/// `saturate'(s)`.
pub fn saturate_d1(s: f64) -> f64 {
    if s <= 2.0 {
        1.0
    } else if s >= 4.0 {
        0.0
    } else {
        let t = 0.5 * (s - 2.0);
        1.0 - 3.0 * t * t + 2.0 * t * t * t
    }
}

/// `saturate''(s)`.
pub fn saturate_d2(s: f64) -> f64 {
    if s <= 2.0 || s >= 4.0 {
        0.0
    } else {
        let t = 0.5 * (s - 2.0);
        0.5 * (-6.0 * t + 6.0 * t * t)
    }
}

/// `sup_s h(s)` over a fine grid of `[0, 4]`, inflated by `1e-6` relative.
fn scan_max(h: impl Fn(f64) -> f64) -> f64 {
    let n = 40_000;
    let m = (0..=n).map(|i| h(4.0 * i as f64 / n as f64)).fold(0.0, f64::max);
    m * (1.0 + 1e-6)
}

/// `G(x, w) = saturate(|x - w|^2 / rho^2)` on `R^n` with `w in R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingBall {
    n: usize,
    rho: f64,
    name: &'static str,
}

impl MovingBall {
    pub fn new(n: usize, rho: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("ball dimension must be at least 1".into()));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!("radius must be positive, got {rho}")));
        }
        Ok(Self { n, rho, name: "moving_ball" })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Constants from one-dimensional scans of the saturated profile.
    pub fn constants(&self) -> ConstantsBundle {
        let rho = self.rho;
        let k = scan_max(|s| saturate_d1(s) * 2.0 * math::sqrt(s) / rho);
        let lip = scan_max(|s| {
            let d1 = saturate_d1(s);
            math::abs(d1).max(math::abs(d1 + 2.0 * s * saturate_d2(s)))
        }) * 2.0
            / (rho * rho);
        ConstantsBundle::new(2.0 / rho, LAMBDA_FLOOR, k, k, k, lip, lip, Some(1.0 / rho))
            .expect("ball constants are positive")
    }

    fn raw(&self, x: &[f64], w: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 / (self.rho * self.rho)
    }
}

impl LevelSet for MovingBall {
    fn name(&self) -> &str {
        self.name
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn param_dim(&self) -> usize {
        self.n
    }
    fn value(&self, x: &[f64], w: &[f64]) -> f64 {
        saturate(self.raw(x, w))
    }
    fn grad_x(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let s = saturate_d1(self.raw(x, w)) * 2.0 / (self.rho * self.rho);
        for i in 0..self.n {
            out[i] = s * (x[i] - w[i]);
        }
    }
    fn grad_w(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        self.grad_x(x, w, out);
        for v in out.iter_mut() {
            *v = -*v;
        }
    }
    fn hessian_x(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.n;
        let r2 = self.rho * self.rho;
        let q = self.raw(x, w);
        let a = saturate_d1(q) * 2.0 / r2;
        let b = saturate_d2(q) * 4.0 / (r2 * r2);
        for i in 0..n {
            for j in 0..n {
                let dij = if i == j { a } else { 0.0 };
                out[i * n + j] = dij + b * (x[i] - w[i]) * (x[j] - w[j]);
            }
        }
    }
    fn anchor(&self, w: &[f64], out: &mut [f64]) {
        out.copy_from_slice(w);
    }
    fn extent(&self, _w: &[f64]) -> f64 {
        self.rho
    }
}

/// Interval constraint `[w - rho, w + rho]` on the real line.
pub fn make_scalar_play(rho: f64) -> Result<LevelSetConstraint> {
    let mut ball = MovingBall::new(1, rho)?;
    ball.name = "scalar_play";
    let k = ball.constants();
    Ok(LevelSetConstraint::new(Arc::new(ball), k))
}

/// Ball of radius `rho` in `R^n` centred at the parameter `w`.
pub fn make_moving_ball(n: usize, rho: f64) -> Result<LevelSetConstraint> {
    let ball = MovingBall::new(n, rho)?;
    let k = ball.constants();
    Ok(LevelSetConstraint::new(Arc::new(ball), k))
}

/// Planar star `|x - c| <= R(theta - phi)`, `R(psi) = r0 (1 + a cos(k psi))`,
/// parameter `w = (c1, c2, phi)`, as `G = saturate((|x - c| / R)^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StarSet {
    r0: f64,
    a: f64,
    k: u32,
}

impl StarSet {
    pub fn new(r0: f64, a: f64, k: u32) -> Result<Self> {
        if !(r0 > 0.0) || !r0.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!("base radius must be positive, got {r0}")));
        }
        if !(0.0..1.0).contains(&a) {
            return Err(Error::InvalidParameter(alloc::format!("amplitude must lie in [0, 1), got {a}")));
        }
        if k < 2 {
            return Err(Error::InvalidParameter(alloc::format!("lobe count must be at least 2, got {k}")));
        }
        Ok(Self { r0, a, k })
    }

    pub fn radius(&self, psi: f64) -> f64 {
        self.r0 * (1.0 + self.a * math::cos(self.k as f64 * psi))
    }

    /// Slope of the linear coercivity modulus valid for distances up to `r0 (1 + a)`.
    pub fn coercivity_slope(&self) -> f64 {
        1.0 / (self.r0 * (1.0 + self.a))
    }

    /// `(q, dq/dd, dq/dphi)` of the unsaturated `q = |d|^2 / R^2`.
    fn raw(&self, x: &[f64], w: &[f64]) -> (f64, [f64; 2], f64) {
        let d = [x[0] - w[0], x[1] - w[1]];
        let d2 = d[0] * d[0] + d[1] * d[1];
        if d2 == 0.0 {
            return (0.0, [0.0, 0.0], 0.0);
        }
        let psi = math::atan2(d[1], d[0]) - w[2];
        let kf = self.k as f64;
        let r = self.radius(psi);
        let dr = -self.r0 * self.a * kf * math::sin(kf * psi);
        let r2 = r * r;
        let r3 = r2 * r;
        let q = d2 / r2;
        let gx = [2.0 * d[0] / r2 + 2.0 * dr / r3 * d[1], 2.0 * d[1] / r2 - 2.0 * dr / r3 * d[0]];
        let gphi = 2.0 * d2 * dr / r3;
        (q, gx, gphi)
    }
}

impl LevelSet for StarSet {
    fn name(&self) -> &str {
        "star"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn param_dim(&self) -> usize {
        3
    }
    fn value(&self, x: &[f64], w: &[f64]) -> f64 {
        saturate(self.raw(x, w).0)
    }
    fn grad_x(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let (q, g, _) = self.raw(x, w);
        let s = saturate_d1(q);
        out[0] = s * g[0];
        out[1] = s * g[1];
    }
    fn grad_w(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let (q, g, gphi) = self.raw(x, w);
        let s = saturate_d1(q);
        out[0] = -s * g[0];
        out[1] = -s * g[1];
        out[2] = s * gphi;
    }
    fn anchor(&self, w: &[f64], out: &mut [f64]) {
        out[0] = w[0];
        out[1] = w[1];
    }
    fn extent(&self, _w: &[f64]) -> f64 {
        self.r0 * (1.0 + self.a)
    }
}

/// Certifier options used for families whose constants are sampled.
pub fn family_certify_options(mu2_slope: Option<f64>) -> CertifyOptions {
    CertifyOptions { mu2_slope, ..CertifyOptions::default() }
}

/// Star constraint with certified constants. The constants are invariant
/// under the translation and rotation carried by `w`, so one parameter
/// sample suffices.
pub fn make_star_set(r0: f64, a: f64, k: u32) -> Result<LevelSetConstraint> {
    let star = StarSet::new(r0, a, k)?;
    let opts = family_certify_options(Some(star.coercivity_slope()));
    let provisional = ConstantsBundle::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, opts.mu2_slope)?;
    let cons = LevelSetConstraint::new(Arc::new(star), provisional);
    let report = certify::certify(&cons, &[vec![0.0, 0.0, 0.0]], &opts)?;
    Ok(cons.with_constants(report.certified))
}

/// Constraint family selected by name, as in configuration files.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum FamilySpec {
    ScalarPlay { rho: f64 },
    MovingBall { n: usize, rho: f64 },
    Star { r0: f64, a: f64, k: u32 },
}

impl FamilySpec {
    pub fn build(&self) -> Result<LevelSetConstraint> {
        match *self {
            FamilySpec::ScalarPlay { rho } => make_scalar_play(rho),
            FamilySpec::MovingBall { n, rho } => make_moving_ball(n, rho),
            FamilySpec::Star { r0, a, k } => make_star_set(r0, a, k),
        }
    }

    pub fn name(&self) -> String {
        match self {
            FamilySpec::ScalarPlay { .. } => "scalar_play".into(),
            FamilySpec::MovingBall { .. } => "moving_ball".into(),
            FamilySpec::Star { .. } => "star".into(),
        }
    }
}

/// Exact play operator for scalar piecewise-linear `u`, `w`:
/// within a step both inputs are affine, so `x - w` moves at the constant
/// rate `u' - w'` until it reaches `+-rho` and then sticks. Crossing times are
/// inserted as nodes. Returns `(x, xi)` with `xi = u - x`.
pub fn play_oracle(u: &PLPath, w: &PLPath, rho: f64, x0: f64) -> Result<(PLPath, PLPath)> {
    if u.dim() != 1 || w.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: u.dim().max(w.dim()) });
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("radius must be positive, got {rho}")));
    }
    let (u, w) = crate::paths::refine_to_common_grid(u, w)?;
    let nodes = u.grid().nodes();
    let mut times = vec![0.0];
    let mut xs = vec![x0];
    let mut y = x0 - w.value(0)[0];
    if math::abs(y) > rho * (1.0 + 1e-12) {
        return Err(Error::InfeasibleInitialState { level: (y / rho) * (y / rho) });
    }
    for k in 0..u.grid().steps() {
        let (t0, t1) = (nodes[k], nodes[k + 1]);
        let du = u.value(k + 1)[0] - u.value(k)[0];
        let dw = w.value(k + 1)[0] - w.value(k)[0];
        let rate = (du - dw) / (t1 - t0);
        let free = y + (du - dw);
        if free.abs() > rho && rate != 0.0 {
            let edge = if free > 0.0 { rho } else { -rho };
            let tc = t0 + (edge - y) / rate;
            if tc > t0 && tc < t1 {
                let wc = w.value(k)[0] + dw * (tc - t0) / (t1 - t0);
                times.push(tc);
                xs.push(wc + edge);
            }
        }
        y = free.clamp(-rho, rho);
        times.push(t1);
        xs.push(w.value(k + 1)[0] + y);
    }
    let grid = TimeGrid::new(times)?;
    let x = PLPath::new(grid.clone(), 1, xs)?;
    let u_fine = u.resample(&grid);
    let xi_vals = u_fine.values().iter().zip(x.values()).map(|(a, b)| a - b).collect();
    let xi = PLPath::new(grid, 1, xi_vals)?;
    Ok((x, xi))
}

/// Time-dependent base of a feedback map.
#[derive(Debug, Clone, PartialEq)]
pub enum BasePath {
    /// `offset + velocity * t`.
    Affine { offset: Vec<f64>, velocity: Vec<f64> },
    Path(PLPath),
}

impl BasePath {
    fn dim(&self) -> usize {
        match self {
            BasePath::Affine { offset, .. } => offset.len(),
            BasePath::Path(p) => p.dim(),
        }
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        match self {
            BasePath::Affine { offset, velocity } => {
                for i in 0..out.len() {
                    out[i] = offset[i] + velocity[i] * t;
                }
            }
            BasePath::Path(p) => p.evaluate_into(t, out),
        }
    }

    fn rate(&self, t: f64, out: &mut [f64]) {
        match self {
            BasePath::Affine { velocity, .. } => out.copy_from_slice(velocity),
            BasePath::Path(p) => {
                let g = p.grid();
                let k = g.locate(t).min(g.steps() - 1);
                p.slope_into(k, out);
            }
        }
    }

    /// Largest slope norm on `[t0, t1]`.
    fn rate_bound(&self, t0: f64, t1: f64) -> f64 {
        match self {
            BasePath::Affine { velocity, .. } => math::norm(velocity),
            BasePath::Path(p) => {
                let g = p.grid();
                let nodes = g.nodes();
                let first = g.locate(t0).min(g.steps() - 1);
                let mut k = first;
                let mut best = 0.0f64;
                while k < g.steps() && (k == first || nodes[k] < t1) {
                    best = best.max(p.slope_norm(k));
                    k += 1;
                }
                best
            }
        }
    }
}

/// `g(t, u, xi) = base(t) + Gamma xi + Omega u`, matrices row-major `m x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFeedback {
    n: usize,
    base: BasePath,
    gamma_mat: Vec<f64>,
    omega_mat: Vec<f64>,
    gamma: f64,
    omega: f64,
}

impl LinearFeedback {
    pub fn new(base: BasePath, gamma_mat: Vec<f64>, omega_mat: Vec<f64>, n: usize) -> Result<Self> {
        let m = base.dim();
        if let BasePath::Affine { velocity, .. } = &base {
            if velocity.len() != m {
                return Err(Error::DimensionMismatch { expected: m, found: velocity.len() });
            }
        }
        for mat in [&gamma_mat, &omega_mat] {
            if mat.len() != m * n {
                return Err(Error::DimensionMismatch { expected: m * n, found: mat.len() });
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("feedback matrix entries must be finite".into()));
            }
        }
        let gamma = math::spectral_norm(&gamma_mat, m, n);
        let omega = math::spectral_norm(&omega_mat, m, n);
        Ok(Self { n, base, gamma_mat, omega_mat, gamma, omega })
    }

    /// Constant base `offset`.
    pub fn constant(offset: Vec<f64>, gamma_mat: Vec<f64>, omega_mat: Vec<f64>, n: usize) -> Result<Self> {
        let velocity = vec![0.0; offset.len()];
        Self::new(BasePath::Affine { offset, velocity }, gamma_mat, omega_mat, n)
    }
}

fn mat_vec_acc(mat: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o += math::dot(&mat[i * n..(i + 1) * n], v);
    }
}

impl StateMap for LinearFeedback {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn param_dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, t: f64, u: &[f64], xi: &[f64], out: &mut [f64]) {
        self.base.eval(t, out);
        mat_vec_acc(&self.gamma_mat, xi, out);
        mat_vec_acc(&self.omega_mat, u, out);
    }
    fn d_t(&self, t: f64, _u: &[f64], _xi: &[f64], out: &mut [f64]) {
        self.base.rate(t, out);
    }
    fn d_u(&self, _t: f64, _u: &[f64], _xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.omega_mat);
    }
    fn d_xi(&self, _t: f64, _u: &[f64], _xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.gamma_mat);
    }
    fn constants(&self) -> StateMapConstants {
        StateMapConstants { gamma: self.gamma, omega: self.omega, c_xi: 0.0, c_u: 0.0 }
    }
    fn time_rate_bound(&self, t0: f64, t1: f64) -> f64 {
        self.base.rate_bound(t0, t1)
    }
    fn time_lipschitz_bound(&self, _t0: f64, _t1: f64) -> f64 {
        0.0
    }
}

/// Largest `|d/ds sech^2 s| = 2 sech^2 |tanh|`, attained at `tanh^2 = 1/3`.
pub const SECH2_SLOPE_MAX: f64 = 0.769_800_358_919_501;

/// `g(t, u, xi) = base(t) + alpha tanh(xi)` componentwise, so `m = n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhFeedback {
    base: BasePath,
    alpha: f64,
}

impl TanhFeedback {
    pub fn new(base: BasePath, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!("gain must be finite, got {alpha}")));
        }
        Ok(Self { base, alpha })
    }
}

impl StateMap for TanhFeedback {
    fn name(&self) -> &str {
        "tanh"
    }
    fn state_dim(&self) -> usize {
        self.base.dim()
    }
    fn param_dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, t: f64, _u: &[f64], xi: &[f64], out: &mut [f64]) {
        self.base.eval(t, out);
        for (o, x) in out.iter_mut().zip(xi) {
            *o += self.alpha * math::tanh(*x);
        }
    }
    fn d_t(&self, t: f64, _u: &[f64], _xi: &[f64], out: &mut [f64]) {
        self.base.rate(t, out);
    }
    fn d_u(&self, _t: f64, _u: &[f64], _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_xi(&self, _t: f64, _u: &[f64], xi: &[f64], out: &mut [f64]) {
        let n = xi.len();
        out.fill(0.0);
        for i in 0..n {
            let th = math::tanh(xi[i]);
            out[i * n + i] = self.alpha * (1.0 - th * th);
        }
    }
    fn constants(&self) -> StateMapConstants {
        let a = math::abs(self.alpha);
        StateMapConstants { gamma: a, omega: 0.0, c_xi: a * SECH2_SLOPE_MAX, c_u: 0.0 }
    }
    fn time_rate_bound(&self, t0: f64, t1: f64) -> f64 {
        self.base.rate_bound(t0, t1)
    }
    fn time_lipschitz_bound(&self, _t0: f64, _t1: f64) -> f64 {
        0.0
    }
}

/// Feedback map selected by kind, as in configuration files. Missing
/// offsets and velocities default to zero, a missing `omega` to the zero matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum StateMapSpec {
    Linear {
        gamma: Vec<f64>,
        #[cfg_attr(feature = "serde", serde(default))]
        omega: Option<Vec<f64>>,
        #[cfg_attr(feature = "serde", serde(default))]
        offset: Option<Vec<f64>>,
        #[cfg_attr(feature = "serde", serde(default))]
        velocity: Option<Vec<f64>>,
    },
    Tanh {
        alpha: f64,
        #[cfg_attr(feature = "serde", serde(default))]
        offset: Option<Vec<f64>>,
        #[cfg_attr(feature = "serde", serde(default))]
        velocity: Option<Vec<f64>>,
    },
}

fn affine_base(offset: &Option<Vec<f64>>, velocity: &Option<Vec<f64>>, m: usize) -> Result<BasePath> {
    let offset = offset.clone().unwrap_or_else(|| vec![0.0; m]);
    let velocity = velocity.clone().unwrap_or_else(|| vec![0.0; m]);
    for v in [&offset, &velocity] {
        if v.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: v.len() });
        }
    }
    Ok(BasePath::Affine { offset, velocity })
}

/// Builds the map for `cons` and refuses feedback with `K1 gamma / c >= 1`.
pub fn make_state_map(spec: &StateMapSpec, cons: &LevelSetConstraint) -> Result<Arc<dyn StateMap>> {
    let (n, m) = (cons.state_dim(), cons.param_dim());
    let map: Arc<dyn StateMap> = match spec {
        StateMapSpec::Linear { gamma, omega, offset, velocity } => {
            let omega = omega.clone().unwrap_or_else(|| vec![0.0; m * n]);
            Arc::new(LinearFeedback::new(affine_base(offset, velocity, m)?, gamma.clone(), omega, n)?)
        }
        StateMapSpec::Tanh { alpha, offset, velocity } => {
            if m != n {
                return Err(Error::DimensionMismatch { expected: n, found: m });
            }
            Arc::new(TanhFeedback::new(affine_base(offset, velocity, m)?, *alpha)?)
        }
    };
    let k = cons.constants();
    let delta = certify::contraction_delta(k.k1, map.constants().gamma, k.c);
    if !(delta < 1.0) {
        return Err(Error::NotAContraction { delta });
    }
    Ok(map)
}

/// Scalar play `rho = 1`, `w = 0`, `u = 2t`, `x0 = 0` on `[0, 1]`. The grid is
/// staggered so the contact time `1/2` falls inside a step.
pub fn play_ramp(steps: usize) -> Result<SweepProblem> {
    let grid = TimeGrid::staggered(1.0, steps)?;
    let u = PLPath::from_fn(grid.clone(), 1, |t, o| o[0] = 2.0 * t);
    SweepProblem::new(make_scalar_play(1.0)?, u, PLPath::constant(grid, &[0.0]), vec![0.0])
}

/// Unit disc dragged along `w = (t, 0)` over `[0, 2]` with `u = 0`, `x0 = 0`;
/// contact at `t = 1`, then `x = (t - 1, 0)`.
pub fn dragging_ball(steps: usize) -> Result<SweepProblem> {
    let grid = TimeGrid::uniform(2.0, steps)?;
    let u = PLPath::constant(grid.clone(), &[0.0, 0.0]);
    let w = PLPath::from_fn(grid, 2, |t, o| {
        o[0] = t;
        o[1] = 0.0;
    });
    SweepProblem::new(make_moving_ball(2, 1.0)?, u, w, vec![0.0, 0.0])
}

/// Star `(r0, a, k) = (1, 0.2, 3)` translated by `(0.15 t, 0)` and turned by
/// `0.3 t` while `u` pushes from the centre toward a concave lobe, on `[0, 1]`.
pub fn star_drag(steps: usize) -> Result<SweepProblem> {
    let grid = TimeGrid::uniform(1.0, steps)?;
    let (c, s) = (math::cos(0.9), math::sin(0.9));
    let u = PLPath::from_fn(grid.clone(), 2, |t, o| {
        o[0] = 1.6 * t * c;
        o[1] = 1.6 * t * s;
    });
    let w = PLPath::from_fn(grid, 3, |t, o| {
        o[0] = 0.15 * t;
        o[1] = 0.0;
        o[2] = 0.3 * t;
    });
    SweepProblem::new(make_star_set(1.0, 0.2, 3)?, u, w, vec![0.0, 0.0])
}

/// Feedback gain giving `K1 gamma / c = delta` on `cons`.
pub fn gain_for_delta(cons: &LevelSetConstraint, delta: f64) -> f64 {
    let k = cons.constants();
    delta * k.c / k.k1
}

/// Scalar play `rho = 1` whose centre follows the output, `w = gamma xi`,
/// with `gamma` chosen for contraction factor `delta`, under `u = 2 sin(2 pi t)`
/// on `[0, 1]` and `x0 = 0`.
pub fn implicit_play(steps: usize, delta: f64, epsilon: f64) -> Result<ImplicitProblem> {
    let cons = make_scalar_play(1.0)?;
    let gamma = gain_for_delta(&cons, delta);
    let grid = TimeGrid::uniform(1.0, steps)?;
    let u = PLPath::from_fn(grid, 1, |t, o| o[0] = 2.0 * math::sin(2.0 * core::f64::consts::PI * t));
    let map = LinearFeedback::constant(vec![0.0], vec![gamma], vec![0.0], 1)?;
    ImplicitProblem::new(cons, u, vec![0.0], Arc::new(map), epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::finite_difference_gradients;
    use crate::math::Sampler;

    #[test]
    fn saturation_is_c2_and_monotone() {
        assert_eq!(saturate(1.5), 1.5);
        assert_eq!(saturate(5.0), 3.0);
        assert!((saturate(4.0) - 3.0).abs() < 1e-15);
        assert_eq!(saturate_d1(2.0), 1.0);
        assert!(saturate_d1(4.0).abs() < 1e-15);
        let mut prev = saturate(0.0);
        for i in 1..=1000 {
            let s = 5.0 * i as f64 / 1000.0;
            let v = saturate(s);
            assert!(v >= prev);
            prev = v;
            let h = 1e-6;
            if (s - 2.0).abs() > 2.0 * h && (s - 4.0).abs() > 2.0 * h {
                let fd = (saturate(s + h) - saturate(s - h)) / (2.0 * h);
                assert!((fd - saturate_d1(s)).abs() < 1e-6);
                let fd2 = (saturate_d1(s + h) - saturate_d1(s - h)) / (2.0 * h);
                assert!((fd2 - saturate_d2(s)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn scalar_play_examples() {
        let play = make_scalar_play(1.0).unwrap();
        assert_eq!(MovingBall::new(1, 1.0).unwrap().raw(&[2.0], &[0.0]), 4.0);
        assert_eq!(play.value(&[2.0], &[0.0]), saturate(4.0));
        assert!(play.contains(&[0.5], &[0.0]));
        assert!((play.grad_x(&[1.0], &[0.0])[0] - 2.0).abs() < 1e-15);
        assert!((play.grad_x(&[-1.0], &[0.0])[0] + 2.0).abs() < 1e-15);
        let rho = 0.5;
        let p = make_scalar_play(rho).unwrap();
        assert!((p.grad_x(&[rho], &[0.0])[0] - 2.0 / rho).abs() < 1e-12);
        assert!((p.constants().c - 2.0 / rho).abs() < 1e-15);
        assert_eq!(p.constants().lambda, LAMBDA_FLOOR);
    }

    #[test]
    fn ball_gradients_are_translation_antisymmetric() {
        let ball = make_moving_ball(3, 0.7).unwrap();
        let mut s = Sampler::new(1, 1);
        for _ in 0..100 {
            let x = s.in_box(&[0.0; 3], 1.5);
            let w = s.in_box(&[0.0; 3], 0.5);
            let gx = ball.grad_x(&x, &w);
            let gw = ball.grad_w(&x, &w);
            for i in 0..3 {
                assert_eq!(gw[i], -gx[i]);
            }
        }
    }

    fn check_gradients(cons: &LevelSetConstraint, half: f64, seed: u64) {
        let n = cons.state_dim();
        let m = cons.param_dim();
        let mut s = Sampler::new(seed, 0);
        for _ in 0..1000 {
            let w = s.in_box(&vec![0.0; m], 0.3);
            let x = s.in_box(&cons.anchor(&w), half);
            let (fx, fw) = finite_difference_gradients(cons.family().as_ref(), &x, &w);
            let gx = cons.grad_x(&x, &w);
            let gw = cons.grad_w(&x, &w);
            let scale = math::norm(&gx).max(math::norm(&gw)).max(1.0);
            for i in 0..n {
                assert!((gx[i] - fx[i]).abs() <= 1e-5 * scale, "x-gradient mismatch at {x:?}");
            }
            for i in 0..m {
                assert!((gw[i] - fw[i]).abs() <= 1e-5 * scale, "w-gradient mismatch at {x:?}");
            }
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        check_gradients(&make_scalar_play(1.0).unwrap(), 2.5, 3);
        check_gradients(&make_moving_ball(2, 1.0).unwrap(), 2.5, 4);
        let star = StarSet::new(1.0, 0.2, 3).unwrap();
        let cons = LevelSetConstraint::new(Arc::new(star), *make_moving_ball(2, 1.0).unwrap().constants());
        check_gradients(&cons, 2.5, 5);
    }

    #[test]
    fn ball_hessian_matches_finite_differences() {
        let ball = MovingBall::new(2, 0.8).unwrap();
        let mut s = Sampler::new(9, 0);
        let mut h = [0.0; 4];
        let mut gp = [0.0; 2];
        let mut gm = [0.0; 2];
        for _ in 0..200 {
            let x = s.in_box(&[0.0, 0.0], 2.0);
            let w = [0.1, -0.2];
            ball.hessian_x(&x, &w, &mut h);
            for j in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += 1e-6;
                xm[j] -= 1e-6;
                ball.grad_x(&xp, &w, &mut gp);
                ball.grad_x(&xm, &w, &mut gm);
                for i in 0..2 {
                    let fd = (gp[i] - gm[i]) / 2e-6;
                    assert!((fd - h[i * 2 + j]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn saturation_leaves_working_tube_unchanged() {
        let star = StarSet::new(1.0, 0.2, 3).unwrap();
        let mut s = Sampler::new(11, 0);
        for _ in 0..2000 {
            let x = s.in_box(&[0.0, 0.0], 1.5);
            let w = [0.0, 0.0, 0.4];
            let (q, _, _) = star.raw(&x, &w);
            if q <= 1.5 {
                assert_eq!(star.value(&x, &w), q);
            }
        }
    }

    #[test]
    fn star_examples() {
        let star = StarSet::new(1.0, 0.2, 3).unwrap();
        assert!((star.radius(0.0) - 1.2).abs() < 1e-15);
        let w = [0.0, 0.0, 0.0];
        assert!((star.value(&[1.2, 0.0], &w) - 1.0).abs() < 1e-14);

        // Degenerate star is a disc.
        let disc = StarSet::new(1.0, 0.0, 3).unwrap();
        assert!((disc.value(&[0.6, 0.8], &w) - 1.0).abs() < 1e-14);

        // Non-convexity: boundary points on either side of the concave
        // lobe at theta = pi/3 have an exterior midpoint.
        let th = core::f64::consts::FRAC_PI_3;
        let p = |t: f64| [star.radius(t) * math::cos(t), star.radius(t) * math::sin(t)];
        let (a, b) = (p(th - 0.3), p(th + 0.3));
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        assert!((star.value(&a, &w) - 1.0).abs() < 1e-12);
        assert!(star.value(&mid, &w) > 1.0);
    }

    #[test]
    fn star_parameters_are_validated() {
        assert!(StarSet::new(0.0, 0.2, 3).is_err());
        assert!(StarSet::new(1.0, 1.0, 3).is_err());
        assert!(StarSet::new(1.0, 0.2, 1).is_err());
    }

    #[test]
    fn play_oracle_examples() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let u = PLPath::from_fn(g.clone(), 1, |t, o| o[0] = 2.0 * t);
        let w = PLPath::constant(g.clone(), &[0.0]);
        let (x, xi) = play_oracle(&u, &w, 1.0, 0.0).unwrap();
        assert!((xi.last()[0] - 1.0).abs() < 1e-14);
        assert!((x.last()[0] - 1.0).abs() < 1e-14);
        // Slopes of xi are 0 or u' = 2.
        for k in 0..xi.grid().steps() {
            let d = crate::paths::derivative(&xi, k).unwrap()[0];
            assert!(d.abs() < 1e-12 || (d - 2.0).abs() < 1e-12);
        }

        // Oscillation of amplitude below rho after first contact keeps xi constant.
        let g = TimeGrid::uniform(4.0, 400).unwrap();
        let u = PLPath::from_fn(g.clone(), 1, |t, o| {
            o[0] = if t <= 1.0 { 1.5 * t } else { 1.5 - 0.8 * math::sin(3.0 * (t - 1.0)).abs() }
        });
        let w = PLPath::constant(g, &[0.0]);
        let (_, xi) = play_oracle(&u, &w, 1.0, 0.0).unwrap();
        let after = xi.evaluate(1.0)[0];
        for t in [1.5, 2.0, 3.0, 4.0] {
            assert!((xi.evaluate(t)[0] - after).abs() < 1e-12);
        }
    }

    #[test]
    fn play_oracle_inserts_crossing_node() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let u = PLPath::from_fn(g.clone(), 1, |t, o| o[0] = 2.0 * t);
        let w = PLPath::constant(g, &[0.0]);
        let (x, _) = play_oracle(&u, &w, 0.7, 0.0).unwrap();
        assert!(x.grid().nodes().iter().any(|&t| (t - 0.35).abs() < 1e-15));
    }

    #[test]
    fn linear_feedback_constants_are_exact() {
        let map = LinearFeedback::constant(vec![0.0, 0.0], vec![0.3, 0.0, 0.0, -0.4], vec![0.0, 0.2, 0.0, 0.0], 2).unwrap();
        let k = map.constants();
        assert!((k.gamma - 0.4).abs() < 1e-12);
        assert!((k.omega - 0.2).abs() < 1e-12);
        assert_eq!((k.c_xi, k.c_u), (0.0, 0.0));
        let mut out = [0.0; 2];
        map.eval(0.5, &[1.0, 2.0], &[1.0, 1.0], &mut out);
        assert!((out[0] - 0.7).abs() < 1e-15 && (out[1] + 0.4).abs() < 1e-15);
        assert!(LinearFeedback::constant(vec![0.0], vec![0.3, 0.1], vec![0.0], 1).is_err());
    }

    #[test]
    fn zero_gain_recovers_explicit_problem() {
        let cons = make_scalar_play(1.0).unwrap();
        let spec = StateMapSpec::Linear { gamma: vec![0.0], omega: None, offset: Some(vec![0.25]), velocity: Some(vec![0.5]) };
        let map = make_state_map(&spec, &cons).unwrap();
        let mut w = [0.0];
        map.eval(2.0, &[3.0], &[7.0], &mut w);
        assert_eq!(w[0], 1.25);
        assert_eq!(map.time_rate_bound(0.0, 1.0), 0.5);
        assert_eq!(map.constants().gamma, 0.0);
    }

    #[test]
    fn contraction_preflight() {
        let cons = make_scalar_play(1.0).unwrap();
        let k = *cons.constants();
        let gain = gain_for_delta(&cons, 0.3);
        assert!((certify::contraction_delta(k.k1, gain, k.c) - 0.3).abs() < 1e-12);
        // With K1 / c = 1 a gain of 0.3 gives delta = 0.3.
        let unit = ConstantsBundle::new(1.0, LAMBDA_FLOOR, 1.0, 1.0, 1.0, 1.0, 1.0, None).unwrap();
        let spec = StateMapSpec::Linear { gamma: vec![0.3], omega: None, offset: None, velocity: None };
        let map = make_state_map(&spec, &cons.clone().with_constants(unit)).unwrap();
        assert!((certify::contraction_delta(1.0, map.constants().gamma, 1.0) - 0.3).abs() < 1e-15);
        let strong = StateMapSpec::Linear { gamma: vec![1.0 / (k.k1 / k.c)], omega: None, offset: None, velocity: None };
        assert!(matches!(make_state_map(&strong, &cons), Err(Error::NotAContraction { .. })));
        let tanh = StateMapSpec::Tanh { alpha: 0.2, offset: None, velocity: None };
        assert!(make_state_map(&tanh, &make_moving_ball(2, 1.0).unwrap()).is_ok());
        assert!(make_state_map(&tanh, &make_star_set(1.0, 0.0, 3).unwrap()).is_err());
    }

    #[test]
    fn tanh_bounds_match_sampled_derivatives() {
        let map = TanhFeedback::new(BasePath::Affine { offset: vec![0.0], velocity: vec![0.0] }, -0.6).unwrap();
        let k = map.constants();
        let mut s = math::Sampler::new(17, 0);
        let (mut d_max, mut lip_max) = (0.0f64, 0.0f64);
        let (mut d0, mut d1) = ([0.0], [0.0]);
        for _ in 0..20000 {
            let x = s.range(-4.0, 4.0);
            let y = x + s.range(-1e-3, 1e-3);
            map.d_xi(0.0, &[0.0], &[x], &mut d0);
            map.d_xi(0.0, &[0.0], &[y], &mut d1);
            d_max = d_max.max(d0[0].abs());
            if x != y {
                lip_max = lip_max.max((d0[0] - d1[0]).abs() / (x - y).abs());
            }
            // Jacobian agrees with a central difference of g.
            let (mut gp, mut gm) = ([0.0], [0.0]);
            map.eval(0.0, &[0.0], &[x + 1e-6], &mut gp);
            map.eval(0.0, &[0.0], &[x - 1e-6], &mut gm);
            assert!(((gp[0] - gm[0]) / 2e-6 - d0[0]).abs() < 1e-8);
        }
        assert!(d_max <= k.gamma && d_max > 0.99 * k.gamma);
        assert!(lip_max <= k.c_xi * (1.0 + 1e-6) && lip_max > 0.99 * k.c_xi);
        assert!((SECH2_SLOPE_MAX - 4.0 / (3.0 * math::sqrt(3.0))).abs() < 1e-15);
    }

    #[test]
    fn path_base_rate_covers_the_interval() {
        let g = TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let base = BasePath::Path(PLPath::new(g, 1, vec![0.0, 0.5, 2.0]).unwrap());
        assert_eq!(base.rate_bound(0.0, 0.5), 1.0);
        assert_eq!(base.rate_bound(0.4, 0.6), 3.0);
        assert_eq!(base.rate_bound(0.6, 1.0), 3.0);
        let mut r = [0.0];
        base.rate(0.7, &mut r);
        assert_eq!(r[0], 3.0);
    }

    #[test]
    fn benchmarks_are_well_posed() {
        let p = play_ramp(100).unwrap();
        assert!(p.u.grid().nodes().iter().all(|&t| t != 0.5));
        let p = dragging_ball(100).unwrap();
        assert_eq!(p.u.grid().t_end(), 2.0);
        let p = star_drag(200).unwrap();
        assert!(p.gate(0.5).check().is_ok());
        let p = implicit_play(100, 0.5, 0.1).unwrap();
        assert!((p.check_contraction().unwrap().1 - 2.0 / 3.0).abs() < 1e-12);
    }
}
