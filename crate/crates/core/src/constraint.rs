//! Sublevel-set constraints `Z(w) = {x : G(x, w) <= 1}` and their geometry:
//! membership, projection, normal rays, distances and Hausdorff estimates.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::math::{self, Sampler};

/// A smooth function `G: R^n x R^m -> [0, inf)` with both partial gradients.
///
/// `Z(w)` must be star-shaped with respect to `anchor(w)` and contained in
/// the ball of radius `extent(w)` around it; boundary sampling shoots rays
/// from the anchor.
pub trait LevelSet: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn value(&self, x: &[f64], w: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], w: &[f64], out: &mut [f64]);
    fn grad_w(&self, x: &[f64], w: &[f64], out: &mut [f64]);

    /// Row-major `n x n` Hessian in `x`; central differences of `grad_x` by default.
    fn hessian_x(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for j in 0..n {
            let h = 1e-6 * math::abs(x[j]).max(1.0);
            xp[j] = x[j] + h;
            self.grad_x(&xp, w, &mut gp);
            xp[j] = x[j] - h;
            self.grad_x(&xp, w, &mut gm);
            xp[j] = x[j];
            for i in 0..n {
                out[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let s = 0.5 * (out[i * n + j] + out[j * n + i]);
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
    }

    /// A point strictly inside `Z(w)`.
    fn anchor(&self, w: &[f64], out: &mut [f64]);

    /// Radius of a ball around `anchor(w)` containing `Z(w)`.
    fn extent(&self, w: &[f64]) -> f64;
}

/// Constants of the constraint family: boundary gradient floor `c`,
/// hypomonotonicity `lambda`, prox radius `r = c / lambda`, parameter
/// Lipschitz constant `l`, gradient bounds `k0, k1`, gradient Lipschitz
/// constants `c0, c1`, and an optional linear coercivity modulus
/// `mu2(rho) = mu2_slope * rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConstantsBundle {
    pub c: f64,
    pub lambda: f64,
    pub r: f64,
    pub l: f64,
    pub k0: f64,
    pub k1: f64,
    pub c0: f64,
    pub c1: f64,
    pub mu2_slope: Option<f64>,
}

impl ConstantsBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c: f64,
        lambda: f64,
        l: f64,
        k0: f64,
        k1: f64,
        c0: f64,
        c1: f64,
        mu2_slope: Option<f64>,
    ) -> Result<Self> {
        let named = [("c", c), ("lambda", lambda), ("L", l), ("K0", k0), ("K1", k1), ("C0", c0), ("C1", c1)];
        for (name, v) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(alloc::format!(
                    "constant {name} must be positive and finite, got {v}"
                )));
            }
        }
        if let Some(k) = mu2_slope {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::InvalidParameter(alloc::format!(
                    "coercivity slope must be positive, got {k}"
                )));
            }
        }
        Ok(Self { c, lambda, r: c / lambda, l, k0, k1, c0, c1, mu2_slope })
    }

    /// Lipschitz constant of `w -> Z(w)` in the Hausdorff distance on
    /// `|w| <= k`: `max(2L/c, D_K L / mu2(r))` with `D_K = mu2^{-1}(2 K L)`.
    /// Without a coercivity modulus only the small-displacement branch `2L/c` is available.
    pub fn hausdorff_constant(&self, k: f64) -> f64 {
        let near = 2.0 * self.l / self.c;
        match self.mu2_slope {
            Some(kappa) => {
                let d_k = 2.0 * k * self.l / kappa;
                near.max(d_k * self.l / (kappa * self.r))
            }
            None => near,
        }
    }
}

/// Tolerances of the projection and boundary searches.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectionOptions {
    pub tol: f64,
    pub level_tol: f64,
    pub max_iter: usize,
    pub safety_factor: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self { tol: 1e-9, level_tol: 1e-10, max_iter: 100, safety_factor: 0.9 }
    }
}

/// `G` together with its constants and projection tolerances.
#[derive(Clone)]
pub struct LevelSetConstraint {
    set: Arc<dyn LevelSet>,
    constants: ConstantsBundle,
    options: ProjectionOptions,
}

impl fmt::Debug for LevelSetConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelSetConstraint")
            .field("family", &self.set.name())
            .field("state_dim", &self.set.state_dim())
            .field("param_dim", &self.set.param_dim())
            .field("constants", &self.constants)
            .field("options", &self.options)
            .finish()
    }
}

/// Outcome of a sampled two-sided Hausdorff distance.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HausdorffEstimate {
    pub distance: f64,
    /// `C_K |w1 - w2|` with `K = max(|w1|, |w2|)`.
    pub bound: f64,
    pub samples: usize,
    pub failures: usize,
}

impl LevelSetConstraint {
    pub fn new(set: Arc<dyn LevelSet>, constants: ConstantsBundle) -> Self {
        Self { set, constants, options: ProjectionOptions::default() }
    }

    pub fn with_options(mut self, options: ProjectionOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_constants(mut self, constants: ConstantsBundle) -> Self {
        self.constants = constants;
        self
    }

    pub fn family(&self) -> &Arc<dyn LevelSet> {
        &self.set
    }

    pub fn name(&self) -> &str {
        self.set.name()
    }

    pub fn constants(&self) -> &ConstantsBundle {
        &self.constants
    }

    pub fn options(&self) -> &ProjectionOptions {
        &self.options
    }

    pub fn state_dim(&self) -> usize {
        self.set.state_dim()
    }

    pub fn param_dim(&self) -> usize {
        self.set.param_dim()
    }

    pub fn value(&self, x: &[f64], w: &[f64]) -> f64 {
        self.set.value(x, w)
    }

    pub fn grad_x(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.state_dim()];
        self.set.grad_x(x, w, &mut g);
        g
    }

    pub fn grad_w(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.param_dim()];
        self.set.grad_w(x, w, &mut g);
        g
    }

    pub fn anchor(&self, w: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.state_dim()];
        self.set.anchor(w, &mut a);
        a
    }

    pub fn extent(&self, w: &[f64]) -> f64 {
        self.set.extent(w)
    }

    pub fn contains(&self, x: &[f64], w: &[f64]) -> bool {
        self.value(x, w) <= 1.0 + self.options.level_tol
    }

    pub fn on_boundary(&self, x: &[f64], w: &[f64]) -> bool {
        math::abs(self.value(x, w) - 1.0) <= self.options.level_tol
    }

    fn check_dims(&self, x: &[f64], w: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), found: x.len() });
        }
        if w.len() != self.param_dim() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), found: w.len() });
        }
        Ok(())
    }

    /// Metric projection of `y` onto `Z(w)`.
    pub fn project(&self, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(y, w)?;
        let opts = self.options;
        let g = self.value(y, w);
        if g <= 1.0 + opts.level_tol {
            return Ok(y.to_vec());
        }
        let limit = opts.safety_factor * self.constants.r;
        // |grad G| <= K0 gives dist(y, Z) >= (G(y) - 1) / K0.
        let lower = (g - 1.0) / self.constants.k0;
        if lower >= limit {
            return Err(Error::OutsideProxTube { distance_estimate: lower, limit });
        }

        let start = match self.level_walk(y, w) {
            Some(x) => x,
            None => self.segment_root(y, &self.anchor(w), w)?,
        };
        let x = match self.kkt_newton(y, w, &start) {
            Some((x, mu)) if mu >= 0.0 => x,
            _ => self.tangent_descent(y, w, start)?,
        };
        let x = self.polish(x, w);
        let d = math::dist(y, &x);
        if d >= limit {
            return Err(Error::OutsideProxTube { distance_estimate: d, limit });
        }
        Ok(x)
    }

    pub fn distance_to_set(&self, y: &[f64], w: &[f64]) -> Result<f64> {
        self.check_dims(y, w)?;
        if self.value(y, w) <= 1.0 {
            return Ok(0.0);
        }
        let x = self.project(y, w)?;
        Ok(math::dist(y, &x))
    }

    /// Distance from `x` in `Z(w)` to the level set `{G(., w) = 1}`.
    pub fn distance_to_boundary(&self, x: &[f64], w: &[f64]) -> Result<f64> {
        self.check_dims(x, w)?;
        let g = self.value(x, w);
        if math::abs(g - 1.0) <= self.options.level_tol {
            return Ok(0.0);
        }
        let n = self.state_dim();
        let count = match n {
            1 => 2,
            2 => 72,
            3 => 200,
            _ => 64 * n,
        };
        let mut dirs = math::sphere_directions(n, count);
        let grad = self.grad_x(x, w);
        let gn = math::norm(&grad);
        if gn > 0.0 {
            dirs.push(grad.iter().map(|v| v / gn).collect());
        }

        let reach = 2.0 * (self.extent(w) + math::dist(x, &self.anchor(w)));
        let mut hits: Vec<(f64, Vec<f64>)> = dirs
            .iter()
            .filter_map(|d| self.ray_exit(x, d, w, reach).map(|p| (math::dist(&p, x), p)))
            .collect();
        if hits.is_empty() {
            return Err(Error::NoConvergence { iterations: count, residual: g - 1.0 });
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = hits[0].0;
        for (d, p) in hits.iter().take(3) {
            if let Some((q, _)) = self.kkt_newton(x, w, p) {
                let dq = math::dist(&q, x);
                if self.on_boundary(&q, w) && dq < best && dq <= *d {
                    best = dq;
                }
            }
        }
        Ok(best)
    }

    /// `x + d * grad_x G / |grad_x G|` for a boundary point `x`.
    pub fn normal_ray(&self, x: &[f64], w: &[f64], d: f64) -> Result<Vec<f64>> {
        self.check_dims(x, w)?;
        let level = self.value(x, w);
        if math::abs(level - 1.0) > self.options.level_tol {
            return Err(Error::NotOnBoundary { level });
        }
        if !(d >= 0.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "normal offset must be nonnegative, got {d}"
            )));
        }
        let g = self.grad_x(x, w);
        let gn = math::norm(&g);
        Ok(math::add_scaled(x, d / gn, &g))
    }

    /// `<n, x - z> + (lambda / 2c) |x - z|^2` with `n` the outward unit normal at boundary point `x`.
    pub fn prox_inequality_residual(&self, x: &[f64], z: &[f64], w: &[f64]) -> Result<f64> {
        self.check_dims(x, w)?;
        let level = self.value(x, w);
        if math::abs(level - 1.0) > self.options.level_tol {
            return Err(Error::NotOnBoundary { level });
        }
        let g = self.grad_x(x, w);
        let gn = math::norm(&g);
        let diff = math::sub(x, z);
        let k = &self.constants;
        Ok(math::dot(&g, &diff) / gn + k.lambda / (2.0 * k.c) * math::dot(&diff, &diff))
    }

    /// Boundary point hit by the ray from `anchor(w)` in direction `dir`.
    pub fn boundary_point(&self, w: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        let a = self.anchor(w);
        let reach = 3.0 * self.extent(w);
        self.ray_exit(&a, dir, w, reach)
            .ok_or(Error::BoundarySearchFailed { failures: 1, total: 1 })
    }

    /// A point of `Z(w)` drawn by rejection from the bounding box.
    pub fn sample_member(&self, w: &[f64], sampler: &mut Sampler) -> Vec<f64> {
        let a = self.anchor(w);
        let e = self.extent(w);
        for _ in 0..256 {
            let p = sampler.in_box(&a, e);
            if self.value(&p, w) <= 1.0 {
                return p;
            }
        }
        a
    }

    /// Sampled two-sided Hausdorff distance between `Z(w1)` and `Z(w2)`.
    pub fn hausdorff_estimate(&self, w1: &[f64], w2: &[f64], n_samples: usize) -> Result<HausdorffEstimate> {
        if n_samples < 100 {
            return Err(Error::InvalidParameter(alloc::format!(
                "Hausdorff estimation needs at least 100 samples, got {n_samples}"
            )));
        }
        let dirs = math::sphere_directions(self.state_dim(), n_samples);
        let mut distance: f64 = 0.0;
        let mut failures = 0;
        let mut total = 0;
        for (from, to) in [(w1, w2), (w2, w1)] {
            for d in &dirs {
                total += 1;
                let gap = self
                    .boundary_point(from, d)
                    .and_then(|b| self.distance_to_set(&b, to));
                match gap {
                    Ok(g) => distance = distance.max(g),
                    Err(_) => failures += 1,
                }
            }
        }
        if failures * 100 > total {
            return Err(Error::BoundarySearchFailed { failures, total });
        }
        let k = math::norm(w1).max(math::norm(w2));
        let bound = self.constants.hausdorff_constant(k) * math::dist(w1, w2);
        Ok(HausdorffEstimate { distance, bound, samples: total, failures })
    }

    /// Newton walk `x <- x - (G - 1) grad G / |grad G|^2` onto the level set.
    fn level_walk(&self, y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
        let n = self.state_dim();
        let cap = 0.5 * self.extent(w);
        let mut x = y.to_vec();
        let mut g = vec![0.0; n];
        for _ in 0..60 {
            let v = self.value(&x, w);
            if math::abs(v - 1.0) <= 1e-13 {
                return Some(x);
            }
            self.set.grad_x(&x, w, &mut g);
            let gn2 = math::dot(&g, &g);
            if !(gn2 > 1e-20) {
                return None;
            }
            let s = (v - 1.0) / gn2;
            let len = math::abs(s) * math::sqrt(gn2);
            let s = if len > cap { s * cap / len } else { s };
            for i in 0..n {
                x[i] -= s * g[i];
            }
        }
        (math::abs(self.value(&x, w) - 1.0) <= self.options.level_tol).then_some(x)
    }

    /// Bisection for `G = 1` on the segment from exterior `y` to interior `a`.
    fn segment_root(&self, y: &[f64], a: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let at = |t: f64| -> Vec<f64> { y.iter().zip(a).map(|(p, q)| p + t * (q - p)).collect() };
        if self.value(a, w) >= 1.0 {
            return Err(Error::NoConvergence { iterations: 0, residual: self.value(a, w) - 1.0 });
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.value(&at(mid), w) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        Ok(self.polish(at(hi), w))
    }

    /// Last point inside `Z(w)` on the ray `p + t dir`, `0 < t <= reach`, refined onto the level set.
    fn ray_exit(&self, p: &[f64], dir: &[f64], w: &[f64], reach: f64) -> Option<Vec<f64>> {
        let at = |t: f64| -> Vec<f64> { math::add_scaled(p, t, dir) };
        let steps = 128;
        let h = reach / steps as f64;
        let mut lo = 0.0;
        let mut hi = None;
        for i in 1..=steps {
            let t = h * i as f64;
            if self.value(&at(t), w) > 1.0 {
                hi = Some(t);
                break;
            }
            lo = t;
        }
        let mut hi = hi?;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.value(&at(mid), w) > 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-16 * reach.max(1.0) {
                break;
            }
        }
        let x = self.polish(at(lo), w);
        self.on_boundary(&x, w).then_some(x)
    }

    /// A few level-set Newton corrections; keeps `x` if they do not help.
    fn polish(&self, mut x: Vec<f64>, w: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        let mut g = vec![0.0; n];
        for _ in 0..4 {
            let v = self.value(&x, w);
            if math::abs(v - 1.0) <= 0.01 * self.options.level_tol {
                break;
            }
            self.set.grad_x(&x, w, &mut g);
            let gn2 = math::dot(&g, &g);
            if !(gn2 > 1e-20) {
                break;
            }
            let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - (v - 1.0) / gn2 * gi).collect();
            if math::abs(self.value(&cand, w) - 1.0) < math::abs(v - 1.0) {
                x = cand;
            } else {
                break;
            }
        }
        x
    }

    /// Damped Newton on `x - y + mu grad G(x) = 0, G(x) = 1`; returns `(x, mu)`.
    fn kkt_newton(&self, y: &[f64], w: &[f64], start: &[f64]) -> Option<(Vec<f64>, f64)> {
        let n = self.state_dim();
        let opts = self.options;
        let mut x = start.to_vec();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        self.set.grad_x(&x, w, &mut g);
        let gn2 = math::dot(&g, &g);
        if !(gn2 > 1e-20) {
            return None;
        }
        let diff = math::sub(y, &x);
        let mut mu = math::dot(&diff, &g) / gn2;

        let residual = |x: &[f64], mu: f64, g: &mut [f64]| -> (Vec<f64>, f64) {
            self.set.grad_x(x, w, g);
            let mut f = vec![0.0; n + 1];
            for i in 0..n {
                f[i] = x[i] - y[i] + mu * g[i];
            }
            f[n] = self.value(x, w) - 1.0;
            let m = math::norm(&f);
            (f, m)
        };

        let (mut f, mut merit) = residual(&x, mu, &mut g);
        let scale = math::norm(y).max(1.0);
        for _ in 0..opts.max_iter {
            if merit <= 0.01 * opts.tol * scale && math::abs(f[n]) <= 0.01 * opts.level_tol {
                return Some((x, mu));
            }
            self.set.hessian_x(&x, w, &mut h);
            let dim = n + 1;
            let mut jac = vec![0.0; dim * dim];
            for i in 0..n {
                for j in 0..n {
                    jac[i * dim + j] = mu * h[i * n + j] + if i == j { 1.0 } else { 0.0 };
                }
                jac[i * dim + n] = g[i];
                jac[n * dim + i] = g[i];
            }
            let mut step: Vec<f64> = f.iter().map(|v| -v).collect();
            math::solve_dense(&mut jac, &mut step, dim)?;

            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let xn: Vec<f64> = (0..n).map(|i| x[i] + alpha * step[i]).collect();
                let mun = mu + alpha * step[n];
                let mut gn = vec![0.0; n];
                let (fnew, mnew) = residual(&xn, mun, &mut gn);
                if mnew < merit || (mnew <= merit && merit == 0.0) {
                    x = xn;
                    mu = mun;
                    f = fnew;
                    merit = mnew;
                    g = gn;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // No descent left: accept if already at rounding level.
                let ok = merit <= opts.tol * scale && math::abs(f[n]) <= opts.level_tol;
                return ok.then_some((x, mu));
            }
        }
        let ok = merit <= opts.tol * scale && math::abs(f[n]) <= opts.level_tol;
        ok.then_some((x, mu))
    }

    /// Fallback: gradient descent of `|y - x|^2` along the level set with a level-walk retraction.
    fn tangent_descent(&self, y: &[f64], w: &[f64], start: Vec<f64>) -> Result<Vec<f64>> {
        let n = self.state_dim();
        let opts = self.options;
        let mut x = start;
        let mut g = vec![0.0; n];
        let mut alpha = 0.5;
        let mut last = f64::INFINITY;
        for _ in 0..10 * opts.max_iter {
            self.set.grad_x(&x, w, &mut g);
            let gn = math::norm(&g);
            if !(gn > 0.0) {
                break;
            }
            let v = math::sub(y, &x);
            let vn = math::dot(&v, &g) / gn;
            let t: Vec<f64> = (0..n).map(|i| v[i] - vn * g[i] / gn).collect();
            let tn = math::norm(&t);
            last = tn;
            if tn <= opts.tol && vn >= 0.0 {
                return Ok(x);
            }
            let d0 = math::dist(y, &x);
            let mut moved = false;
            while alpha > 1e-12 {
                let cand = math::add_scaled(&x, alpha, &t);
                if let Some(c) = self.level_walk(&cand, w) {
                    if math::dist(y, &c) < d0 {
                        x = c;
                        moved = true;
                        alpha = (alpha * 2.0).min(1.0);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                return if tn <= 1e3 * opts.tol && vn >= 0.0 {
                    Ok(x)
                } else {
                    Err(Error::NoConvergence { iterations: opts.max_iter, residual: tn })
                };
            }
        }
        Err(Error::NoConvergence { iterations: 10 * opts.max_iter, residual: last })
    }
}

/// `<y - x, x - z> + (|y - x| / 2r) |x - z|^2` for a projection `x` of `y`.
pub fn projection_residual(y: &[f64], x: &[f64], z: &[f64], r: f64) -> f64 {
    let a = math::sub(y, x);
    let b = math::sub(x, z);
    math::dot(&a, &b) + math::norm(&a) / (2.0 * r) * math::dot(&b, &b)
}

/// Central-difference gradients `(d_x G, d_w G)` for checking analytic ones.
pub fn finite_difference_gradients(set: &dyn LevelSet, x: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let fd = |v: &[f64], f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> {
        let mut p = v.to_vec();
        (0..v.len())
            .map(|i| {
                let h = 1e-6 * math::abs(v[i]).max(1.0);
                p[i] = v[i] + h;
                let fp = f(&p);
                p[i] = v[i] - h;
                let fm = f(&p);
                p[i] = v[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    };
    let gx = fd(x, &|p| set.value(p, w));
    let gw = fd(w, &|p| set.value(x, p));
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{make_moving_ball, make_scalar_play, make_star_set, StarSet};

    fn star() -> LevelSetConstraint {
        make_star_set(1.0, 0.2, 3).unwrap()
    }

    /// Nearest of `count` boundary samples by polar angle; smallest index wins ties.
    fn star_scan(y: &[f64], count: usize) -> (f64, [f64; 2]) {
        let s = StarSet::new(1.0, 0.2, 3).unwrap();
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..count {
            let th = 2.0 * core::f64::consts::PI * i as f64 / count as f64;
            let r = s.radius(th);
            let p = [r * math::cos(th), r * math::sin(th)];
            let d = math::dist(y, &p);
            if d < best.0 {
                best = (d, p);
            }
        }
        best
    }

    #[test]
    fn member_projects_to_itself() {
        let disc = make_moving_ball(2, 1.0).unwrap();
        assert_eq!(disc.project(&[0.3, -0.2], &[0.0, 0.0]).unwrap(), vec![0.3, -0.2]);
    }

    #[test]
    fn unit_disc_projection_and_distances() {
        let disc = make_moving_ball(2, 1.0).unwrap();
        let w = [0.0, 0.0];
        let x = disc.project(&[2.0, 0.0], &w).unwrap();
        assert!(math::dist(&x, &[1.0, 0.0]) < 1e-9);
        assert!((disc.distance_to_set(&[3.0, 0.0], &w).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(disc.distance_to_set(&[0.1, 0.1], &w).unwrap(), 0.0);
        assert!((disc.distance_to_boundary(&[0.0, 0.0], &w).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(disc.distance_to_boundary(&[1.0, 0.0], &w).unwrap(), 0.0);
        let y = disc.normal_ray(&[1.0, 0.0], &w, 0.5).unwrap();
        assert!(math::dist(&y, &[1.5, 0.0]) < 1e-15);
        assert_eq!(disc.normal_ray(&[1.0, 0.0], &w, 0.0).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(disc.normal_ray(&[0.5, 0.0], &w, 0.1), Err(Error::NotOnBoundary { .. })));
        assert_eq!(disc.prox_inequality_residual(&[1.0, 0.0], &[1.0, 0.0], &w).unwrap(), 0.0);
        assert!(disc.prox_inequality_residual(&[1.0, 0.0], &[-1.0, 0.0], &w).unwrap() > 0.0);
    }

    #[test]
    fn scalar_interval_projection() {
        let play = make_scalar_play(1.0).unwrap();
        let x = play.project(&[1.7], &[0.2]).unwrap();
        assert!((x[0] - 1.2).abs() < 1e-12);
        let x = play.project(&[-3.0], &[0.0]).unwrap();
        assert!((x[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn star_projection_matches_boundary_scan() {
        // (1.5, 0.4) sits just beyond 0.9 r for the certified r, so the
        // default tube rejects it and a widened tube projects it.
        let cons = star();
        let w = [0.0, 0.0, 0.0];
        let y = [1.5, 0.4];
        assert!(matches!(cons.project(&y, &w), Err(Error::OutsideProxTube { .. })));
        let opts = ProjectionOptions { safety_factor: 1.5, ..ProjectionOptions::default() };
        let cons = cons.with_options(opts);
        let x = cons.project(&y, &w).unwrap();
        let (d, p) = star_scan(&y, 1_000_000);
        assert!((math::dist(&y, &x) - d).abs() < 1e-4);
        assert!(math::dist(&x, &p) < 1e-3);
        assert!((cons.distance_to_set(&y, &w).unwrap() - d).abs() < 1e-4);
    }

    #[test]
    fn star_distance_to_boundary_from_centre() {
        let cons = star();
        let d = cons.distance_to_boundary(&[0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((d - 0.8).abs() < 1e-4, "got {d}");
    }

    #[test]
    fn star_normal_ray_round_trip() {
        let cons = star();
        let w = [0.0, 0.0, 0.0];
        let r = cons.constants().r;
        for i in 0..24 {
            let th = 2.0 * core::f64::consts::PI * i as f64 / 24.0 + 0.1;
            let b = cons.boundary_point(&w, &[math::cos(th), math::sin(th)]).unwrap();
            let y = cons.normal_ray(&b, &w, 0.3 * r).unwrap();
            let d = cons.distance_to_set(&y, &w).unwrap();
            assert!((d - 0.3 * r).abs() < 1e-6, "angle {th}: {d} vs {}", 0.3 * r);
        }
    }

    #[test]
    fn projection_rejects_points_outside_tube() {
        let cons = star();
        let r = cons.constants().r;
        let y = [1.2 + 2.0 * r, 0.0];
        assert!(matches!(cons.project(&y, &[0.0, 0.0, 0.0]), Err(Error::OutsideProxTube { .. })));
    }

    #[test]
    fn hausdorff_of_translated_discs() {
        let disc = make_moving_ball(2, 1.0).unwrap();
        let same = disc.hausdorff_estimate(&[0.0, 0.0], &[0.0, 0.0], 200).unwrap();
        assert_eq!(same.distance, 0.0);
        let h = disc.hausdorff_estimate(&[0.0, 0.0], &[0.3, 0.0], 400).unwrap();
        assert!((h.distance - 0.3).abs() < 1e-3);
        assert!(h.distance <= h.bound);
        assert!(disc.hausdorff_estimate(&[0.0, 0.0], &[0.3, 0.0], 50).is_err());
    }

    #[test]
    fn star_hausdorff_matches_double_scan() {
        let cons = star();
        let phi = 5.0f64.to_radians();
        let h = cons.hausdorff_estimate(&[0.0, 0.0, 0.0], &[0.0, 0.0, phi], 2000).unwrap();
        // Brute force: boundary samples of each set against a dense scan of the other.
        let s = StarSet::new(1.0, 0.2, 3).unwrap();
        let n = 20_000;
        let pts = |rot: f64| -> Vec<[f64; 2]> {
            (0..n)
                .map(|i| {
                    let th = 2.0 * core::f64::consts::PI * i as f64 / n as f64;
                    let r = s.radius(th - rot);
                    [r * math::cos(th), r * math::sin(th)]
                })
                .collect()
        };
        let a = pts(0.0);
        let b = pts(phi);
        let one_way = |p: &[[f64; 2]], q: &[[f64; 2]], rot: f64| -> f64 {
            let mut worst: f64 = 0.0;
            for (i, x) in p.iter().enumerate().step_by(10) {
                let th = 2.0 * core::f64::consts::PI * i as f64 / n as f64;
                // Only points outside the other set contribute.
                if math::norm(x) <= s.radius(th - rot) {
                    continue;
                }
                let d = q.iter().map(|z| math::dist(x, z)).fold(f64::INFINITY, f64::min);
                worst = worst.max(d);
            }
            worst
        };
        let brute = one_way(&a, &b, phi).max(one_way(&b, &a, 0.0));
        assert!((h.distance - brute).abs() < 1e-3, "{} vs {brute}", h.distance);
    }
}
