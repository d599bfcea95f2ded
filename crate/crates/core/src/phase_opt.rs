//! RIS phase optimization and power allocation.
//!
//! Two regimes share the objective `tr((C + x x^H)^-1 W)` with `x = D t`:
//!
//! - the relaxed regime, where `t` only has to satisfy `||t||^2 = N_R + 1`;
//!   the optimum is a generalized eigenvector and everything runs in the
//!   `K`-dimensional span of `Q` (coordinates `u`),
//! - the explicit regime, where every RIS entry is unit modulus and the
//!   phases are swept one element at a time.
//!
//! When `C` has a one-dimensional null space (all BS antennas in use) the
//! inversion lemma breaks down and the pseudoinverse-based form
//! `tr(C~^+) + (1 + x~^H C~^+ x~) / |w^H x~|^2` is used instead, with
//! `C~ = W^-1/2 C W^-1/2`, `x~ = W^-1/2 x` and `w` the null vector of `C~`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::numerics::{
    self, hermitian_condition, hermitian_evd, inverse, mul, mul_vec, principal_eigpair_psd_weighted,
    quad, real_diag, sesq, solve, CMat, CVec, C64,
};
use crate::zf_core::{sum_se, Allocation, PowerAllocation, SubspaceCache, SINGULAR_COND};
use crate::{Error, Result};

/// Eigenvalues of `C~` below this fraction of its trace count as zero.
pub const NULL_EIG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub max_iter: usize,
    /// Relative SE change that ends the alternating optimization.
    pub rel_tol: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinalizeOptions {
    pub max_iter: usize,
    /// Absolute SE change in bits/s/Hz.
    pub tol: f64,
    /// Element-wise passes between two waterfilling updates.
    pub sweeps_per_iter: usize,
}

impl Default for FinalizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            sweeps_per_iter: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseState {
    /// Norm-relaxed solution `t = Q u`, `||u||^2 = N_R + 1`; `v` is the
    /// principal eigenvector from the last relaxed step.
    Relaxed { u: CVec, v: CVec },
    /// Unit-modulus `theta_bar` with last entry 1.
    Explicit { theta_bar: CVec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalState {
    /// Gains of the accepted iterate.
    pub gains_prev: Vec<f64>,
    /// `diag(gains_prev) * diag(powers)`, the weights for the next phase step.
    pub gamma_tilde: Vec<f64>,
    pub se: f64,
    pub iteration: usize,
    /// SE of every accepted iterate since the last (re)start.
    pub se_history: Vec<f64>,
}

/// `A = C^-1 - (C + (N_R+1) R^H R)^-1` and the selection metric
/// `tr(C^-1) - lambda_max(A)`.
pub fn relaxed_metric(c: &CMat, rr: &CMat, n_ris: usize) -> Result<(f64, CMat)> {
    let (c_inv, a) = relaxed_a(c, rr, n_ris)?;
    let lambda = hermitian_evd(&a)?.eigenvalues[0];
    Ok((numerics::trace_re(&c_inv) - lambda, a))
}

fn relaxed_a(c: &CMat, rr: &CMat, n_ris: usize) -> Result<(CMat, CMat)> {
    let cond = hermitian_condition(&hermitian_evd(c)?);
    if cond > SINGULAR_COND {
        return Err(Error::Singular(cond));
    }
    let n = (n_ris + 1) as f64;
    let c_inv = numerics::hermitian_part(&inverse(c)?);
    let big_inv = inverse(&(c + rr.scale(n)))?;
    let a = numerics::hermitian_part(&(&c_inv - big_inv));
    Ok((c_inv, a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceStep {
    /// `tr(C^-1 W) - lambda_max(A W)`.
    pub objective: f64,
    pub gains: Vec<f64>,
    /// Unit principal eigenvector of `A W`.
    pub v: CVec,
    /// `v` rescaled so that `(C + x x^H)^-1 = C^-1 - v_scaled v_scaled^H`.
    pub v_scaled: CVec,
    /// `D_i t` at the relaxed optimum.
    pub x: CVec,
}

/// Relaxed phase step for fixed weights `W = gamma_tilde` in the subspace.
///
/// The optimum `x = D_i t*` is parallel to `C v`; with
/// `p = C^-1 x / sqrt(1 + x^H C^-1 x)` (parallel to `v`) the new gains are
/// `1 / (C^-1_jj - |p_j|^2)`.
pub fn subspace_eval_step(
    c: &CMat,
    rr: &CMat,
    gamma_tilde: &[f64],
    n_ris: usize,
) -> Result<SubspaceStep> {
    let i = c.nrows();
    let (c_inv, a) = relaxed_a(c, rr, n_ris)?;
    let (lambda, v) = principal_eigpair_psd_weighted(&a, gamma_tilde)?;
    let objective: f64 = (0..i).map(|j| gamma_tilde[j] * c_inv[(j, j)].re).sum::<f64>() - lambda;

    let n = (n_ris + 1) as f64;
    let wv = CVec::from_fn(i, |j, _| v[j] * gamma_tilde[j]);
    let z = solve(&(c + rr.scale(n)), &wv)?;
    let rz = mul_vec(rr, &z);
    let zz = z.dotc(&rz).re;
    let x = if zz > 0.0 {
        rz.scale((n / zz).sqrt())
    } else {
        CVec::zeros(i)
    };
    let cx = mul_vec(&c_inv, &x);
    let v_scaled = cx.unscale((1.0 + x.dotc(&cx).re).sqrt());
    let gains = (0..i)
        .map(|j| 1.0 / (c_inv[(j, j)].re - v_scaled[j].norm_sqr()))
        .collect::<Vec<_>>();
    check_gains(&gains)?;
    Ok(SubspaceStep {
        objective,
        gains,
        v,
        v_scaled,
        x,
    })
}

fn check_gains(gains: &[f64]) -> Result<()> {
    match gains.iter().find(|&&g| !(g > 0.0) || !g.is_finite()) {
        Some(g) => Err(Error::Degenerate(format!("non-positive channel gain {g}"))),
        None => Ok(()),
    }
}

/// `u = R_i (C + (N_R+1) R_i^H R_i)^-1 W v`, scaled to norm `sqrt(N_R + 1)`.
///
/// With `r_block = D_i^H` the same formula returns the relaxed `t` itself.
pub fn recover_u(
    c: &CMat,
    r_block: &CMat,
    gamma_tilde: &[f64],
    v: &CVec,
    n_ris: usize,
) -> Result<CVec> {
    let i = c.nrows();
    let n = (n_ris + 1) as f64;
    let rr = mul(&r_block.adjoint(), r_block);
    let wv = CVec::from_fn(i, |j, _| v[j] * gamma_tilde[j]);
    let z = solve(&(c + rr.scale(n)), &wv)?;
    let u = mul_vec(r_block, &z);
    let norm = u.norm();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("relaxed phase direction vanishes".into()));
    }
    Ok(u.scale(n.sqrt() / norm))
}

/// Pieces of the rank-deficient form for weights `W`.
#[derive(Debug, Clone)]
pub struct SingularParts {
    /// `W^-1/2` diagonal.
    pub inv_sqrt: Vec<f64>,
    /// Unit null vector of `C~`.
    pub w: CVec,
    pub c_pinv: CMat,
}

impl SingularParts {
    pub fn new(c: &CMat, weights: &[f64]) -> Result<Self> {
        let i = c.nrows();
        if weights.len() != i || weights.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::Domain("weights must be positive, one per user".into()));
        }
        let inv_sqrt: Vec<f64> = weights.iter().map(|g| 1.0 / g.sqrt()).collect();
        let ct = CMat::from_fn(i, i, |r, s| c[(r, s)] * (inv_sqrt[r] * inv_sqrt[s]));
        let eig = hermitian_evd(&ct)?;
        let tr: f64 = eig.eigenvalues.iter().map(|l| l.abs()).sum();
        let thr = NULL_EIG_TOL * tr;
        let nullity = eig.eigenvalues.iter().filter(|&&l| l <= thr).count();
        if nullity != 1 {
            return Err(Error::Degenerate(format!(
                "expected a one-dimensional null space, found {nullity}"
            )));
        }
        let mut c_pinv = CMat::zeros(i, i);
        for k in 0..i - 1 {
            let col = eig.eigenvectors.column(k);
            c_pinv += (col * col.adjoint()).unscale(eig.eigenvalues[k]);
        }
        numerics::ops::record((i * i * i) as u64, i);
        Ok(Self {
            inv_sqrt,
            w: eig.eigenvectors.column(i - 1).into_owned(),
            c_pinv,
        })
    }

    fn scaled(&self, x: &CVec) -> CVec {
        CVec::from_fn(x.len(), |j, _| x[j] * self.inv_sqrt[j])
    }

    /// `tr((C + x x^H)^-1 W)`, infinite when `x` misses the null direction.
    pub fn objective(&self, x: &CVec) -> f64 {
        let xt = self.scaled(x);
        let beta = self.w.dotc(&xt).norm_sqr();
        let tr = numerics::trace_re(&self.c_pinv);
        if beta <= 0.0 {
            return f64::INFINITY;
        }
        tr + (1.0 + quad(&self.c_pinv, &xt)) / beta
    }

    /// Diagonal of `(C + x x^H)^-1`.
    pub fn inverse_diag(&self, x: &CVec) -> Result<Vec<f64>> {
        let xt = self.scaled(x);
        let beta = self.w.dotc(&xt);
        if !(beta.norm_sqr() > 0.0) {
            return Err(Error::Degenerate("composite channel is rank deficient".into()));
        }
        let k = mul_vec(&self.c_pinv, &xt);
        let tail = (1.0 + xt.dotc(&k).re) / beta.norm_sqr();
        Ok((0..xt.len())
            .map(|j| {
                let cross = (k[j] * self.w[j].conj() / beta).re;
                let m = self.c_pinv[(j, j)].re - 2.0 * cross + tail * self.w[j].norm_sqr();
                m * self.inv_sqrt[j] * self.inv_sqrt[j]
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularStep {
    pub objective: f64,
    /// Relaxed optimizer in the coordinates of `r_block` (`u`, or `t` for `D_i^H`).
    pub u: CVec,
    pub gains: Vec<f64>,
    /// `D_i t` at the optimizer.
    pub x: CVec,
}

/// Relaxed step for rank-deficient `C`.
///
/// The optimizer is `(I/(N_R+1) + E C~^+ E^H)^-1 E w`, normalized to
/// `sqrt(N_R+1)`, with `E = r_block W^-1/2`. It fails with
/// [`Error::Degenerate`] when the RIS cannot reach the null direction.
pub fn singular_relaxed_step(
    c: &CMat,
    r_block: &CMat,
    gamma_tilde: &[f64],
    n_ris: usize,
) -> Result<SingularStep> {
    let (parts, objective, u) = singular_core(c, r_block, gamma_tilde, n_ris)?;
    let x = mul_vec(&r_block.adjoint(), &u);
    let diag = parts.inverse_diag(&x)?;
    let gains: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
    check_gains(&gains)?;
    Ok(SingularStep {
        objective,
        u,
        gains,
        x,
    })
}

/// Relaxed minimum of `tr((C + x x^H)^-1 W)` for rank-deficient `C`, without
/// the gains. Infinite when the RIS cannot reach the null direction.
pub fn singular_relaxed_metric(
    c: &CMat,
    r_block: &CMat,
    gamma_tilde: &[f64],
    n_ris: usize,
) -> Result<f64> {
    match singular_core(c, r_block, gamma_tilde, n_ris) {
        Ok((_, objective, _)) => Ok(objective),
        Err(Error::Degenerate(msg)) if msg.starts_with("RIS cannot") => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn singular_core(
    c: &CMat,
    r_block: &CMat,
    gamma_tilde: &[f64],
    n_ris: usize,
) -> Result<(SingularParts, f64, CVec)> {
    let i = c.nrows();
    let m = r_block.nrows();
    let n = (n_ris + 1) as f64;
    let parts = SingularParts::new(c, gamma_tilde)?;
    let e = CMat::from_fn(m, i, |r, s| r_block[(r, s)] * parts.inv_sqrt[s]);
    let g = mul_vec(&e, &parts.w);
    let b = CMat::identity(m, m).unscale(n) + mul(&mul(&e, &parts.c_pinv), &e.adjoint());
    let y = solve(&b, &g)?;
    let denom = g.dotc(&y).re;
    if !(denom > 1e-300) || g.norm() == 0.0 {
        return Err(Error::Degenerate(
            "RIS cannot reach the null direction of C".into(),
        ));
    }
    let objective = numerics::trace_re(&parts.c_pinv) + 1.0 / denom;
    let u = y.scale(n.sqrt() / y.norm());
    Ok((parts, objective, u))
}

/// Closed-form waterfilling: `gamma_j = max(0, mu - 1/lambda_j)`, `sum = ptx`.
///
/// Streams with non-positive gain are left without power.
pub fn waterfill(gains: &[f64], ptx: f64) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..gains.len())
        .filter(|&j| gains[j] > 0.0 && gains[j].is_finite())
        .collect();
    let mut out = vec![0.0; gains.len()];
    if idx.is_empty() || !(ptx > 0.0) {
        return out;
    }
    idx.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let inv: Vec<f64> = idx.iter().map(|&j| 1.0 / gains[j]).collect();
    let mut active = inv.len();
    while active > 0 {
        let sum: f64 = inv[..active].iter().sum();
        if (ptx + sum) / active as f64 > inv[active - 1] {
            break;
        }
        active -= 1;
    }
    // mu - 1/lambda_j cancels badly when mu >> ptx; the pairwise level
    // differences on the active set are bounded by ptx instead.
    for (pos, &j) in idx.iter().enumerate().take(active) {
        let spread: f64 = inv[..active].iter().map(|&l| l - inv[pos]).sum();
        out[j] = ((ptx + spread) / active as f64).max(0.0);
    }
    out
}

/// Largest relative violation of the waterfilling KKT conditions: the budget
/// equality, a common water level on the active set, and `1/lambda_j >= mu`
/// on the inactive set.
pub fn waterfill_kkt_residual(gains: &[f64], powers: &[f64], ptx: f64) -> f64 {
    let active: Vec<usize> = (0..gains.len()).filter(|&j| powers[j] > 0.0).collect();
    let total: f64 = powers.iter().sum();
    let mut res = (total - ptx).abs() / ptx;
    if active.is_empty() {
        return res;
    }
    let mu = active.iter().map(|&j| powers[j] + 1.0 / gains[j]).sum::<f64>() / active.len() as f64;
    for j in 0..gains.len() {
        let level = 1.0 / gains[j];
        let r = if powers[j] > 0.0 {
            (powers[j] + level - mu).abs() / mu
        } else {
            (mu - level).max(0.0) / mu
        };
        res = res.max(r);
        if powers[j] < 0.0 {
            res = f64::INFINITY;
        }
    }
    res
}

/// `exp(j arg(Q u))`, rotated so the last entry is exactly 1.
pub fn project_theta(q: &CMat, u: &CVec) -> CVec {
    let y = q * u;
    let mut t = y.map(|z| {
        let r = z.norm();
        if r > 0.0 {
            z / r
        } else {
            C64::new(1.0, 0.0)
        }
    });
    let last = t.len() - 1;
    let rot = t[last].conj();
    t.iter_mut().for_each(|z| {
        *z *= rot;
        *z /= z.norm();
    });
    t[last] = C64::new(1.0, 0.0);
    t
}

/// Objective `base + sign * (q0 + x^H P x) / (r0 + x^H S x)`, which covers
/// both the inversion-lemma form and the rank-deficient form of
/// `tr((C + x x^H)^-1 W)`.
#[derive(Debug, Clone)]
pub struct RatioObjective {
    base: f64,
    sign: f64,
    q0: f64,
    p: CMat,
    r0: f64,
    s: CMat,
}

impl RatioObjective {
    pub fn regular(c: &CMat, weights: &[f64]) -> Result<Self> {
        let c_inv = numerics::hermitian_part(&inverse(c)?);
        let base = (0..c.nrows()).map(|j| weights[j] * c_inv[(j, j)].re).sum();
        let p = numerics::hermitian_part(&mul(&mul(&c_inv, &real_diag(weights)), &c_inv));
        Ok(Self {
            base,
            sign: -1.0,
            q0: 0.0,
            p,
            r0: 1.0,
            s: c_inv,
        })
    }

    pub fn singular(c: &CMat, weights: &[f64]) -> Result<Self> {
        let parts = SingularParts::new(c, weights)?;
        let i = c.nrows();
        let sc = &parts.inv_sqrt;
        let p = CMat::from_fn(i, i, |r, s| parts.c_pinv[(r, s)] * (sc[r] * sc[s]));
        let ws = CVec::from_fn(i, |j, _| parts.w[j] * sc[j]);
        Ok(Self {
            base: numerics::trace_re(&parts.c_pinv),
            sign: 1.0,
            q0: 1.0,
            p,
            r0: 0.0,
            s: &ws * ws.adjoint(),
        })
    }

    pub fn new(c: &CMat, weights: &[f64], singular: bool) -> Result<Self> {
        if singular {
            Self::singular(c, weights)
        } else {
            Self::regular(c, weights)
        }
    }

    pub fn eval(&self, x: &CVec) -> f64 {
        let den = self.r0 + quad(&self.s, x);
        if den <= 0.0 {
            return f64::INFINITY;
        }
        self.base + self.sign * (self.q0 + quad(&self.p, x)) / den
    }

    /// One pass over the first `d.ncols() - 1` entries of `theta_bar`, each
    /// replaced by its exact minimizer with the others held fixed.
    pub fn sweep(&self, d: &CMat, theta_bar: &CVec) -> CVec {
        let mut t = theta_bar.clone();
        let mut x = d * &t;
        for n in 0..t.len() - 1 {
            let dn = d.column(n).into_owned();
            let s = &x - &dn * t[n];
            let a0 = self.q0 + quad(&self.p, &s) + quad(&self.p, &dn);
            let b0 = sesq(&s, &self.p, &dn);
            let c0 = self.r0 + quad(&self.s, &s) + quad(&self.s, &dn);
            let d0 = sesq(&s, &self.s, &dn);
            let f = |z: C64| {
                let den = c0 + 2.0 * (d0 * z).re;
                if den <= 0.0 {
                    f64::INFINITY
                } else {
                    self.base + self.sign * (a0 + 2.0 * (b0 * z).re) / den
                }
            };
            let mut best = (f(t[n]), t[n]);
            for z in stationary_phases(a0, b0, c0, d0) {
                let val = f(z);
                if val < best.0 {
                    best = (val, z);
                }
            }
            if best.1 != t[n] {
                t[n] = best.1;
                x = s + dn * best.1;
            }
        }
        t
    }
}

/// Stationary points of `phi -> (a0 + 2 Re(b0 e^{j phi})) / (c0 + 2 Re(d0 e^{j phi}))`.
///
/// Setting the derivative to zero gives
/// `Im(kappa e^{j phi}) = -2 Im(b0 conj(d0))` with `kappa = b0 c0 - a0 d0`.
fn stationary_phases(a0: f64, b0: C64, c0: f64, d0: C64) -> Vec<C64> {
    let kappa = b0 * c0 - d0 * a0;
    let mag = kappa.norm();
    if !(mag > 0.0) || !mag.is_finite() {
        return Vec::new();
    }
    let rhs = (-2.0 * (b0 * d0.conj()).im / mag).clamp(-1.0, 1.0);
    let psi = kappa.arg();
    let base = rhs.asin();
    vec![
        C64::from_polar(1.0, base - psi),
        C64::from_polar(1.0, PI - base - psi),
    ]
}

/// One element-wise pass minimizing `tr((C + D t t^H D^H)^-1 W)` over the
/// unit-modulus entries of `t = theta_bar` (last entry held at 1). The
/// rank-deficient form is used when `C` is ill-conditioned.
pub fn elementwise_sweep(c: &CMat, d: &CMat, theta_bar: &CVec, gamma_tilde: &[f64]) -> Result<CVec> {
    let singular = hermitian_condition(&hermitian_evd(c)?) > SINGULAR_COND;
    Ok(RatioObjective::new(c, gamma_tilde, singular)?.sweep(d, theta_bar))
}

/// Per-stream gains `1 / [(C + D t t^H D^H)^-1]_jj` for explicit `t`.
pub fn gains_explicit(c: &CMat, d: &CMat, theta_bar: &CVec) -> Result<Vec<f64>> {
    let singular = hermitian_condition(&hermitian_evd(c)?) > SINGULAR_COND;
    gains_explicit_routed(c, d, theta_bar, singular)
}

fn gains_explicit_routed(c: &CMat, d: &CMat, theta_bar: &CVec, singular: bool) -> Result<Vec<f64>> {
    let i = c.nrows();
    let x = d * theta_bar;
    let gains: Vec<f64> = if singular {
        let parts = SingularParts::new(c, &vec![1.0; i])?;
        parts.inverse_diag(&x)?.iter().map(|m| 1.0 / m).collect()
    } else {
        let c_inv = numerics::hermitian_part(&inverse(c)?);
        let y = &c_inv * &x;
        let den = 1.0 + x.dotc(&y).re;
        (0..i)
            .map(|j| 1.0 / (c_inv[(j, j)].re - y[j].norm_sqr() / den))
            .collect()
    };
    check_gains(&gains)?;
    Ok(gains)
}

/// Relaxed phase step on an allocation, regular or singular as appropriate.
#[derive(Debug, Clone)]
pub struct RelaxedStep {
    pub objective: f64,
    pub gains: Vec<f64>,
    pub u: CVec,
    pub v: CVec,
}

pub fn relaxed_step(alloc: &Allocation, gamma_tilde: &[f64], n_ris: usize) -> Result<RelaxedStep> {
    if alloc.singular {
        let s = singular_relaxed_step(&alloc.c_mat, &alloc.r_block, gamma_tilde, n_ris)?;
        let v = s.x.normalize();
        return Ok(RelaxedStep {
            objective: s.objective,
            gains: s.gains,
            u: s.u,
            v,
        });
    }
    let s = subspace_eval_step(&alloc.c_mat, &alloc.rr, gamma_tilde, n_ris)?;
    let u = match recover_u(&alloc.c_mat, &alloc.r_block, gamma_tilde, &s.v, n_ris) {
        Ok(u) => u,
        // The RIS has no effect on these users; any feasible u is optimal.
        Err(Error::Degenerate(_)) => {
            let mut u = CVec::zeros(alloc.r_block.nrows());
            u[0] = C64::new(((n_ris + 1) as f64).sqrt(), 0.0);
            u
        }
        Err(e) => return Err(e),
    };
    Ok(RelaxedStep {
        objective: s.objective,
        gains: s.gains,
        u,
        v: s.v,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Allocation after zero-power users were removed.
    pub allocation: Allocation,
    pub se: f64,
    pub state: EvalState,
    pub power: PowerAllocation,
    pub phase: PhaseState,
    /// Users removed during the evaluation.
    pub deallocated: Vec<usize>,
}

/// Alternates the relaxed phase step with waterfilling, starting from equal
/// weights `ptx / i`. Users left without power are removed and the
/// optimization restarts on the survivors. An iterate with lower SE than the
/// previous one ends the loop and is discarded.
pub fn evaluate_allocation(
    allocation: &Allocation,
    cache: &SubspaceCache,
    ptx: f64,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let n_ris = cache.n_ris;
    let mut alloc = allocation.clone();
    let mut deallocated = Vec::new();
    'restart: loop {
        let i = alloc.len();
        if i == 0 {
            return Err(Error::Degenerate("every user was deallocated".into()));
        }
        let mut gamma = vec![ptx / i as f64; i];
        let mut best: Option<(f64, Vec<f64>, Vec<f64>, RelaxedStep)> = None;
        let mut history = Vec::new();
        let mut iteration = 0;
        while iteration < opts.max_iter {
            iteration += 1;
            let step = relaxed_step(&alloc, &gamma, n_ris)?;
            let powers = waterfill(&step.gains, ptx);
            let idle: Vec<usize> = (0..i).filter(|&j| powers[j] <= 0.0).collect();
            if !idle.is_empty() {
                deallocated.extend(idle.iter().map(|&j| alloc.order[j]));
                alloc = alloc.without_positions(cache, &idle)?;
                continue 'restart;
            }
            let se = sum_se(&PowerAllocation {
                gains: step.gains.clone(),
                powers: powers.clone(),
                ptx,
            })?;
            let prev = best.as_ref().map(|b| b.0);
            if prev.is_some_and(|p| se < p) {
                break;
            }
            gamma = step.gains.iter().zip(&powers).map(|(l, p)| l * p).collect();
            history.push(se);
            best = Some((se, step.gains.clone(), powers, step));
            if let Some(p) = prev {
                if (se - p).abs() <= opts.rel_tol * se.abs().max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
        let (se, gains, powers, step) =
            best.ok_or_else(|| Error::Degenerate("no accepted iterate".into()))?;
        let gamma_tilde = gains.iter().zip(&powers).map(|(l, p)| l * p).collect();
        return Ok(Evaluation {
            allocation: alloc,
            se,
            state: EvalState {
                gains_prev: gains.clone(),
                gamma_tilde,
                se,
                iteration,
                se_history: history,
            },
            power: PowerAllocation { gains, powers, ptx },
            phase: PhaseState::Relaxed {
                u: step.u,
                v: step.v,
            },
            deallocated,
        });
    }
}

#[derive(Debug, Clone)]
pub struct Finalized {
    pub allocation: Allocation,
    /// Unit-modulus RIS phases, `N_R` entries.
    pub theta: CVec,
    pub power: PowerAllocation,
    pub se: f64,
    pub iterations: usize,
    pub se_history: Vec<f64>,
}

/// Unit-modulus refinement at full dimension: starting from the projected
/// relaxed solution, alternate element-wise sweeps with waterfilling on the
/// exact gains. Returns the best iterate seen.
pub fn finalize_phases(
    evaluation: &Evaluation,
    cache: &SubspaceCache,
    ptx: f64,
    opts: &FinalizeOptions,
) -> Result<Finalized> {
    let theta_bar = match &evaluation.phase {
        PhaseState::Relaxed { u, .. } => project_theta(&cache.q, u),
        PhaseState::Explicit { theta_bar } => theta_bar.clone(),
    };
    let (alloc, theta_bar, gamma) = (
        evaluation.allocation.clone(),
        theta_bar,
        evaluation.state.gamma_tilde.clone(),
    );
    refine_explicit(alloc, theta_bar, gamma, cache, ptx, opts)
}

fn refine_explicit(
    mut alloc: Allocation,
    mut theta_bar: CVec,
    mut gamma: Vec<f64>,
    cache: &SubspaceCache,
    ptx: f64,
    opts: &FinalizeOptions,
) -> Result<Finalized> {
    let mut best: Option<Finalized> = None;
    let mut history = Vec::new();
    let mut prev_se: Option<f64> = None;
    let mut iterations = 0;
    // Iteration 0 scores the starting point without sweeping.
    let mut sweep = false;
    while iterations <= opts.max_iter {
        if alloc.is_empty() {
            break;
        }
        let d = alloc.d_rows(cache);
        if sweep {
            let obj = RatioObjective::new(&alloc.c_mat, &gamma, alloc.singular)?;
            for _ in 0..opts.sweeps_per_iter {
                theta_bar = obj.sweep(&d, &theta_bar);
            }
        }
        let gains = match gains_explicit_routed(&alloc.c_mat, &d, &theta_bar, alloc.singular) {
            Ok(g) => g,
            Err(Error::Degenerate(_)) if best.is_some() => break,
            Err(e) => return Err(e),
        };
        let powers = waterfill(&gains, ptx);
        let idle: Vec<usize> = (0..alloc.len()).filter(|&j| powers[j] <= 0.0).collect();
        if !idle.is_empty() {
            gamma = (0..alloc.len())
                .filter(|j| !idle.contains(j))
                .map(|j| gamma[j])
                .collect();
            alloc = alloc.without_positions(cache, &idle)?;
            best = None;
            prev_se = None;
            history.clear();
            continue;
        }
        let power = PowerAllocation { gains, powers, ptx };
        let se = sum_se(&power)?;
        history.push(se);
        gamma = power.gains.iter().zip(&power.powers).map(|(l, p)| l * p).collect();
        if best.as_ref().is_none_or(|b| se > b.se) {
            best = Some(Finalized {
                allocation: alloc.clone(),
                theta: theta_bar.rows(0, theta_bar.len() - 1).into_owned(),
                power,
                se,
                iterations,
                se_history: Vec::new(),
            });
        }
        if sweep && prev_se.is_some_and(|p| (se - p).abs() < opts.tol) {
            break;
        }
        prev_se = Some(se);
        sweep = true;
        iterations += 1;
    }
    let mut out = best.ok_or_else(|| Error::Degenerate("every user was deallocated".into()))?;
    out.iterations = iterations;
    out.se_history = history;
    Ok(out)
}

/// Explicit-dimension evaluation of an allocation: relaxed evaluation for a
/// starting point, then [`finalize_phases`].
pub fn evaluate_explicit(
    allocation: &Allocation,
    cache: &SubspaceCache,
    ptx: f64,
    eval: &EvalOptions,
    fin: &FinalizeOptions,
) -> Result<Finalized> {
    let ev = evaluate_allocation(allocation, cache, ptx, eval)?;
    finalize_phases(&ev, cache, ptx, fin)
}
