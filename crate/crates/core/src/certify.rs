//! Sampling estimates of the constraint constants and their re-verification.
//!
//! Every estimator draws from its own random stream per parameter sample, so
//! a run with more samples sees a superset of the points of a smaller run and
//! max-type estimates can only grow (min-type ones only shrink).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::constraint::{ConstantsBundle, LevelSetConstraint};
use crate::error::{Error, Result};
use crate::math::{self, Sampler};

const STREAM_FLOOR: u64 = 1;
const STREAM_HYPO: u64 = 2;
const STREAM_PARAM: u64 = 3;
const STREAM_COERCIVE: u64 = 4;

fn stream(kind: u64, w_index: usize) -> u64 {
    (kind << 32) | w_index as u64
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CertifyOptions {
    pub seed: u64,
    pub n_boundary: usize,
    pub n_pairs: usize,
    pub n_param: usize,
    pub lambda_floor: f64,
    /// Positive stand-in for Lipschitz-type constants sampled as zero.
    pub param_floor: f64,
    /// Half-width of the `x` sampling box in units of the set extent.
    pub box_scale: f64,
    pub floor_safety: f64,
    pub lipschitz_safety: f64,
    pub mu2_slope: Option<f64>,
    pub rho_list: Vec<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            seed: 0x00c0_ffee,
            n_boundary: 1000,
            n_pairs: 10_000,
            n_param: 4000,
            lambda_floor: 1e-6,
            param_floor: 1e-9,
            box_scale: 2.5,
            floor_safety: 0.95,
            lipschitz_safety: 1.05,
            mu2_slope: None,
            rho_list: vec![0.1, 0.5],
        }
    }
}

/// The sample attaining an estimate.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Witness {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub w_alt: Vec<f64>,
    pub value: f64,
}

/// All sampled values of one quantity plus the extreme sample.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Estimate {
    pub value: f64,
    pub samples: usize,
    pub witness: Witness,
    #[cfg_attr(feature = "serde", serde(skip))]
    values: Vec<f64>,
}

impl Estimate {
    fn empty(init: f64) -> Self {
        Self { value: init, samples: 0, witness: Witness { value: init, ..Witness::default() }, values: Vec::new() }
    }

    fn push_max(&mut self, v: f64, make: impl FnOnce() -> Witness) {
        self.values.push(v);
        self.samples += 1;
        if v > self.value {
            self.value = v;
            self.witness = make();
        }
    }

    fn push_min(&mut self, v: f64, make: impl FnOnce() -> Witness) {
        self.values.push(v);
        self.samples += 1;
        if v < self.value {
            self.value = v;
            self.witness = make();
        }
    }

    /// Sampled values exceeding `bound` (relative slack `1e-12`).
    pub fn count_above(&self, bound: f64) -> usize {
        let slack = 1e-12 * bound.abs().max(1e-300);
        self.values.iter().filter(|&&v| v > bound + slack).count()
    }

    pub fn count_below(&self, bound: f64) -> usize {
        let slack = 1e-12 * bound.abs().max(1e-300);
        self.values.iter().filter(|&&v| v < bound - slack).count()
    }
}

fn witness(x: &[f64], z: &[f64], w: &[f64], w_alt: &[f64], value: f64) -> Witness {
    Witness { x: x.to_vec(), z: z.to_vec(), w: w.to_vec(), w_alt: w_alt.to_vec(), value }
}

/// Minimum of `|grad_x G|` over boundary points found along random rays.
pub fn estimate_gradient_floor(
    cons: &LevelSetConstraint,
    w_samples: &[Vec<f64>],
    n_boundary: usize,
    seed: u64,
) -> Result<Estimate> {
    let n = cons.state_dim();
    let mut est = Estimate::empty(f64::INFINITY);
    let mut failures = 0;
    let mut total = 0;
    for (wi, w) in w_samples.iter().enumerate() {
        let mut s = Sampler::new(seed, stream(STREAM_FLOOR, wi));
        for _ in 0..n_boundary {
            total += 1;
            let dir = s.unit_vector(n);
            match cons.boundary_point(w, &dir) {
                Ok(x) => {
                    let g = math::norm(&cons.grad_x(&x, w));
                    est.push_min(g, || witness(&x, &[], w, &[], g));
                }
                Err(_) => failures += 1,
            }
        }
    }
    if failures * 100 > total || est.samples == 0 {
        return Err(Error::BoundarySearchFailed { failures, total });
    }
    Ok(est)
}

/// Largest `-<grad G(x) - grad G(z), x - z> / |x - z|^2` over pairs with `x`
/// on the boundary and `z` in the set, together with `-min eig` of the
/// Hessian at the boundary points. The raw value may be negative for convex sets.
pub fn estimate_hypomonotonicity(
    cons: &LevelSetConstraint,
    w_samples: &[Vec<f64>],
    n_pairs: usize,
    seed: u64,
) -> Result<Estimate> {
    let n = cons.state_dim();
    let mut est = Estimate::empty(f64::NEG_INFINITY);
    let mut hess = vec![0.0; n * n];
    let mut failures = 0;
    let mut total = 0;
    for (wi, w) in w_samples.iter().enumerate() {
        let mut s = Sampler::new(seed, stream(STREAM_HYPO, wi));
        let extent = cons.extent(w);
        for i in 0..n_pairs {
            total += 1;
            let dir = s.unit_vector(n);
            let x = match cons.boundary_point(w, &dir) {
                Ok(x) => x,
                Err(_) => {
                    failures += 1;
                    continue;
                }
            };
            let gx = cons.grad_x(&x, w);
            let z = if i % 2 == 0 {
                cons.sample_member(w, &mut s)
            } else {
                // Local pair: step inward along the normal plus a tangential jitter.
                let gn = math::norm(&gx);
                let depth = s.range(1e-3, 0.2) * extent;
                let jitter = s.unit_vector(n);
                let mut z: Vec<f64> = (0..n).map(|j| x[j] - depth * gx[j] / gn + depth * jitter[j]).collect();
                if cons.value(&z, w) > 1.0 {
                    z = cons.sample_member(w, &mut s);
                }
                z
            };
            let diff = math::sub(&x, &z);
            let d2 = math::dot(&diff, &diff);
            if d2 > 1e-24 {
                let gz = cons.grad_x(&z, w);
                let dg = math::sub(&gx, &gz);
                let need = -math::dot(&dg, &diff) / d2;
                est.push_max(need, || witness(&x, &z, w, &[], need));
            }
            if i % 8 == 0 {
                cons.family().hessian_x(&x, w, &mut hess);
                let low = math::symmetric_eigenvalues(&hess, n).into_iter().fold(f64::INFINITY, f64::min);
                est.push_max(-low, || witness(&x, &x, w, &[], -low));
            }
        }
    }
    if failures * 100 > total || est.samples == 0 {
        return Err(Error::BoundarySearchFailed { failures, total });
    }
    Ok(est)
}

/// Sampled estimates of `L, K0, K1, C0, C1` over the box around each set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamEstimates {
    pub l: Estimate,
    pub k0: Estimate,
    pub k1: Estimate,
    pub c0: Estimate,
    pub c1: Estimate,
}

pub fn estimate_param_constants(
    cons: &LevelSetConstraint,
    w_samples: &[Vec<f64>],
    n_samples: usize,
    box_scale: f64,
    seed: u64,
) -> ParamEstimates {
    let n = cons.state_dim();
    let m = cons.param_dim();
    let fam = cons.family();
    let mut l = Estimate::empty(0.0);
    let mut k0 = Estimate::empty(0.0);
    let mut k1 = Estimate::empty(0.0);
    let mut c0 = Estimate::empty(0.0);
    let mut c1 = Estimate::empty(0.0);
    let mut hess = vec![0.0; n * n];
    let mut gxp = vec![0.0; n];
    let mut gxm = vec![0.0; n];
    let mut gwp = vec![0.0; m];
    let mut gwm = vec![0.0; m];
    for (wi, w) in w_samples.iter().enumerate() {
        let mut s = Sampler::new(seed, stream(STREAM_PARAM, wi));
        let a = cons.anchor(w);
        let half = box_scale * cons.extent(w);
        let wscale = 0.1 * (1.0 + math::norm(w));
        for _ in 0..n_samples {
            let x = s.in_box(&a, half);
            let dw: Vec<f64> = (0..m).map(|_| wscale * s.gaussian()).collect();
            let w2 = math::add_scaled(w, 1.0, &dw);

            let gx = cons.grad_x(&x, w);
            let gw = cons.grad_w(&x, w);
            let nx = math::norm(&gx);
            let nw = math::norm(&gw);
            k0.push_max(nx, || witness(&x, &[], w, &[], nx));
            k1.push_max(nw, || witness(&x, &[], w, &[], nw));

            let dwn = math::norm(&dw);
            if dwn > 0.0 {
                let ratio = math::abs(cons.value(&x, w) - cons.value(&x, &w2)) / dwn;
                l.push_max(ratio, || witness(&x, &[], w, &w2, ratio));
            }
            // |grad_w G| bounds the Lipschitz quotient from below in the limit.
            l.push_max(nw, || witness(&x, &[], w, &[], nw));

            // Jacobian blocks of both gradients by central differences.
            fam.hessian_x(&x, w, &mut hess);
            let mut jxw = vec![0.0; n * m];
            let mut jwx = vec![0.0; m * n];
            let mut jww = vec![0.0; m * m];
            let mut wp = w.to_vec();
            for j in 0..m {
                let h = 1e-6 * math::abs(w[j]).max(1.0);
                wp[j] = w[j] + h;
                fam.grad_x(&x, &wp, &mut gxp);
                fam.grad_w(&x, &wp, &mut gwp);
                wp[j] = w[j] - h;
                fam.grad_x(&x, &wp, &mut gxm);
                fam.grad_w(&x, &wp, &mut gwm);
                wp[j] = w[j];
                for i in 0..n {
                    jxw[i * m + j] = (gxp[i] - gxm[i]) / (2.0 * h);
                }
                for i in 0..m {
                    jww[i * m + j] = (gwp[i] - gwm[i]) / (2.0 * h);
                }
            }
            let mut xp = x.clone();
            for j in 0..n {
                let h = 1e-6 * math::abs(x[j]).max(1.0);
                xp[j] = x[j] + h;
                fam.grad_w(&xp, w, &mut gwp);
                xp[j] = x[j] - h;
                fam.grad_w(&xp, w, &mut gwm);
                xp[j] = x[j];
                for i in 0..m {
                    jwx[i * n + j] = (gwp[i] - gwm[i]) / (2.0 * h);
                }
            }
            let lx = math::spectral_norm(&hess, n, n).max(math::spectral_norm(&jxw, n, m));
            let lw = math::spectral_norm(&jwx, m, n).max(math::spectral_norm(&jww, m, m));
            c0.push_max(lx, || witness(&x, &[], w, &[], lx));
            c1.push_max(lw, || witness(&x, &[], w, &[], lw));
        }
    }
    ParamEstimates { l, k0, k1, c0, c1 }
}

/// Result of checking `dist(x, Z(w)) >= rho  =>  G(x, w) - 1 >= mu2(rho)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoercivityCheck {
    pub passed: bool,
    pub checked: usize,
    pub skipped: usize,
    /// Worst `G - 1 - mu2(rho)`; negative on failure.
    pub worst_margin: f64,
    pub violations: Vec<Witness>,
}

/// Exterior points are placed along outward normals of sampled boundary
/// points; their true distance is recomputed by projection, and points the
/// projection cannot reach are skipped.
pub fn check_coercivity(
    cons: &LevelSetConstraint,
    w_samples: &[Vec<f64>],
    rho_list: &[f64],
    mu2_slope: f64,
    n_per_rho: usize,
    seed: u64,
) -> CoercivityCheck {
    let n = cons.state_dim();
    let mut out = CoercivityCheck {
        passed: true,
        checked: 0,
        skipped: 0,
        worst_margin: f64::INFINITY,
        violations: Vec::new(),
    };
    for (wi, w) in w_samples.iter().enumerate() {
        let mut s = Sampler::new(seed, stream(STREAM_COERCIVE, wi));
        for &rho in rho_list {
            if rho <= 0.0 {
                continue;
            }
            let need = mu2_slope * rho;
            for _ in 0..n_per_rho {
                let dir = s.unit_vector(n);
                let offset = rho * s.range(1.0, 1.5);
                let Ok(b) = cons.boundary_point(w, &dir) else {
                    out.skipped += 1;
                    continue;
                };
                let Ok(x) = cons.normal_ray(&b, w, offset) else {
                    out.skipped += 1;
                    continue;
                };
                let dist = match cons.distance_to_set(&x, w) {
                    Ok(d) => d,
                    Err(_) => {
                        out.skipped += 1;
                        continue;
                    }
                };
                if dist < rho {
                    out.skipped += 1;
                    continue;
                }
                out.checked += 1;
                let margin = cons.value(&x, w) - 1.0 - need;
                out.worst_margin = out.worst_margin.min(margin);
                if margin < 0.0 {
                    out.passed = false;
                    if out.violations.len() < 16 {
                        out.violations.push(witness(&x, &b, w, &[], margin));
                    }
                }
            }
        }
    }
    out
}

/// Pass/fail of one hypothesis clause.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClauseResult {
    pub clause: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CertificationReport {
    pub family: String,
    pub seed: u64,
    /// Sampled extremes before safety factors.
    pub estimated: ConstantsBundle,
    /// Floors times `floor_safety`, Lipschitz-type constants times `lipschitz_safety`.
    pub certified: ConstantsBundle,
    pub floor_safety: f64,
    pub lipschitz_safety: f64,
    pub gradient_floor: Estimate,
    pub hypomonotonicity: Estimate,
    pub params: ParamEstimates,
    pub coercivity: Option<CoercivityCheck>,
    pub verification: Verification,
    pub clauses: Vec<ClauseResult>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }
}

/// Violations of a bundle on a fresh sample, per constant.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Verification {
    pub seed: u64,
    pub samples: usize,
    pub c: usize,
    pub lambda: usize,
    pub l: usize,
    pub k0: usize,
    pub k1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Verification {
    pub fn violations(&self) -> usize {
        self.c + self.lambda + self.l + self.k0 + self.k1 + self.c0 + self.c1
    }
}

/// Checks every constant of `bundle` against a sample drawn with `seed`.
pub fn verify_constants(
    cons: &LevelSetConstraint,
    bundle: &ConstantsBundle,
    w_samples: &[Vec<f64>],
    opts: &CertifyOptions,
    seed: u64,
) -> Result<Verification> {
    let floor = estimate_gradient_floor(cons, w_samples, opts.n_boundary, seed)?;
    let hypo = estimate_hypomonotonicity(cons, w_samples, opts.n_pairs, seed)?;
    let p = estimate_param_constants(cons, w_samples, opts.n_param, opts.box_scale, seed);
    Ok(Verification {
        seed,
        samples: floor.samples + hypo.samples + p.k0.samples + p.l.samples + p.c0.samples,
        c: floor.count_below(bundle.c),
        lambda: hypo.count_above(bundle.lambda),
        l: p.l.count_above(bundle.l),
        k0: p.k0.count_above(bundle.k0),
        k1: p.k1.count_above(bundle.k1),
        c0: p.c0.count_above(bundle.c0),
        c1: p.c1.count_above(bundle.c1),
    })
}

/// Estimates all constants of `cons` over the parameter samples, applies
/// safety factors, and re-verifies the certified bundle on a fresh seed.
pub fn certify(
    cons: &LevelSetConstraint,
    w_samples: &[Vec<f64>],
    opts: &CertifyOptions,
) -> Result<CertificationReport> {
    if w_samples.is_empty() {
        return Err(Error::InvalidParameter("at least one parameter sample is required".into()));
    }
    if let Some(w) = w_samples.iter().find(|w| w.len() != cons.param_dim()) {
        return Err(Error::DimensionMismatch { expected: cons.param_dim(), found: w.len() });
    }
    let floor = estimate_gradient_floor(cons, w_samples, opts.n_boundary, opts.seed)?;
    let hypo = estimate_hypomonotonicity(cons, w_samples, opts.n_pairs, opts.seed)?;
    let params = estimate_param_constants(cons, w_samples, opts.n_param, opts.box_scale, opts.seed);

    let pf = opts.param_floor;
    let lam_raw = hypo.value.max(opts.lambda_floor);
    let estimated = ConstantsBundle::new(
        floor.value,
        lam_raw,
        params.l.value.max(pf),
        params.k0.value.max(pf),
        params.k1.value.max(pf),
        params.c0.value.max(pf),
        params.c1.value.max(pf),
        opts.mu2_slope,
    )?;
    let up = |v: f64| (opts.lipschitz_safety * v).max(pf);
    let certified = ConstantsBundle::new(
        opts.floor_safety * floor.value,
        (opts.lipschitz_safety * hypo.value).max(opts.lambda_floor),
        up(params.l.value),
        up(params.k0.value),
        up(params.k1.value),
        up(params.c0.value),
        up(params.c1.value),
        opts.mu2_slope,
    )?;

    let coercivity = opts.mu2_slope.map(|k| {
        check_coercivity(cons, w_samples, &opts.rho_list, k, opts.n_boundary / 4 + 1, opts.seed)
    });
    let fresh = opts.seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let verification = verify_constants(cons, &certified, w_samples, opts, fresh)?;

    let mut clauses = vec![
        ClauseResult {
            clause: "gradient_floor".into(),
            passed: certified.c > 0.0,
            detail: alloc::format!("min |grad_x G| on {} boundary samples = {:e}", floor.samples, floor.value),
        },
        ClauseResult {
            clause: "hypomonotonicity".into(),
            passed: certified.lambda.is_finite(),
            detail: alloc::format!("raw lambda {:e} over {} samples; r = {:e}", hypo.value, hypo.samples, certified.r),
        },
        ClauseResult {
            clause: "parameter_lipschitz".into(),
            passed: certified.l.is_finite() && certified.k1.is_finite(),
            detail: alloc::format!("L = {:e}, K1 = {:e}", certified.l, certified.k1),
        },
        ClauseResult {
            clause: "gradient_bounds".into(),
            passed: certified.k0.is_finite() && certified.c0.is_finite() && certified.c1.is_finite(),
            detail: alloc::format!("K0 = {:e}, C0 = {:e}, C1 = {:e}", certified.k0, certified.c0, certified.c1),
        },
        ClauseResult {
            clause: "fresh_sample_verification".into(),
            passed: verification.violations() == 0,
            detail: alloc::format!(
                "{} violations on {} fresh samples",
                verification.violations(),
                verification.samples
            ),
        },
    ];
    if let Some(co) = &coercivity {
        clauses.push(ClauseResult {
            clause: "coercivity".into(),
            passed: co.passed,
            detail: alloc::format!("{} checked, {} skipped, worst margin {:e}", co.checked, co.skipped, co.worst_margin),
        });
    }

    Ok(CertificationReport {
        family: cons.name().into(),
        seed: opts.seed,
        estimated,
        certified,
        floor_safety: opts.floor_safety,
        lipschitz_safety: opts.lipschitz_safety,
        gradient_floor: floor,
        hypomonotonicity: hypo,
        params,
        coercivity,
        verification,
        clauses,
    })
}

/// `delta = K1 gamma / c`.
pub fn contraction_delta(k1: f64, gamma: f64, c: f64) -> f64 {
    k1 * gamma / c
}
