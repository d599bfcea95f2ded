//! Allocation-dependent matrices, zero-forcing precoders and sum-SE.
//!
//! With a rank-one BS-RIS channel the Gram matrix of the composite channel
//! splits as `H_c H_c^H = C + D t t^H D^H`, where `t = [theta; 1]`,
//! `C = H_cd (I - b b^H) H_cd^H` and the rows of `D` are
//! `d_k^H = [h_{r,k}^H diag(a), h_{d,k}^H b]`. A single thin QR of `D^H` over
//! all users makes every `D_i D_i^H` available as `R_i^H R_i`, a `K`-sized
//! object that no longer depends on the number of RIS elements.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::numerics::{
    self, hermitian_condition, hermitian_evd, inverse, mul, pseudoinverse, CMat, CVec, C64,
};
use crate::{Error, Result};

/// Above this condition number `C_i` is handled by the singular route.
pub const SINGULAR_COND: f64 = 1e12;

/// Relative singular-value floor for a usable ZF channel.
pub const ZF_RANK_TOL: f64 = 1e-10;

/// Tolerance on `|theta_n| = 1`.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    /// Noise-normalized per-stream channel gains.
    pub gains: Vec<f64>,
    pub powers: Vec<f64>,
    pub ptx: f64,
}

impl PowerAllocation {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

/// `C_i` for the given users, straight from the definition.
pub fn build_c(realization: &ChannelRealization, order: &[usize]) -> CMat {
    let h = select_rows(&realization.h_direct, order);
    let nb = realization.n_bs();
    let proj = CMat::identity(nb, nb) - &realization.b * realization.b.adjoint();
    numerics::hermitian_part(&(&h * proj * h.adjoint()))
}

/// `D` over all users: `K x (N_R + 1)`, row `k` is
/// `[h_{r,k}^H diag(a), h_{d,k}^H b]`.
pub fn build_d_columns(realization: &ChannelRealization) -> Result<CMat> {
    let (k, nr) = (realization.n_users(), realization.n_ris());
    if nr + 1 < k {
        return Err(Error::Config(format!(
            "subspace reduction needs n_ris + 1 >= n_users ({nr} + 1 < {k})"
        )));
    }
    let hdb = &realization.h_direct * &realization.b;
    Ok(CMat::from_fn(k, nr + 1, |u, n| {
        if n < nr {
            realization.h_ris_user[(u, n)] * realization.a[n]
        } else {
            hdb[u]
        }
    }))
}

pub fn select_rows(m: &CMat, rows: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_cols(m: &CMat, cols: &[usize]) -> CMat {
    CMat::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn principal_submatrix(m: &CMat, idx: &[usize]) -> CMat {
    CMat::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Per-realization data shared by every allocation step.
#[derive(Debug, Clone)]
pub struct SubspaceCache {
    pub n_bs: usize,
    pub n_ris: usize,
    /// `K x (N_R + 1)`.
    pub d: CMat,
    /// Thin factor of `D^H`, `(N_R + 1) x K`.
    pub q: CMat,
    /// `K x K` upper triangular, `D^H = Q R`.
    pub r: CMat,
    /// `R^H R = D D^H`.
    pub gram_r: CMat,
    /// `C` over all users.
    pub c_full: CMat,
}

impl SubspaceCache {
    pub fn new(realization: &ChannelRealization) -> Result<Self> {
        let d = build_d_columns(realization)?;
        let (q, r) = numerics::thin_qr(&d.adjoint())?;
        let gram_r = numerics::hermitian_part(&(r.adjoint() * &r));
        let all: Vec<usize> = (0..realization.n_users()).collect();
        Ok(Self {
            n_bs: realization.n_bs(),
            n_ris: realization.n_ris(),
            d,
            q,
            r,
            gram_r,
            c_full: build_c(realization, &all),
        })
    }

    pub fn n_users(&self) -> usize {
        self.d.nrows()
    }

    /// `N_R + 1`, the squared norm of the relaxed phase vector.
    pub fn relaxed_norm2(&self) -> f64 {
        (self.n_ris + 1) as f64
    }

    /// True when the RIS cannot change any user's channel.
    pub fn ris_is_dead(&self) -> bool {
        let nr = self.n_ris;
        (0..self.d.nrows()).all(|u| (0..nr).all(|n| self.d[(u, n)] == C64::new(0.0, 0.0)))
    }
}

/// Ordered user selection with the matrices `C_i`, `R_i` and `R_i^H R_i`.
#[derive(Debug, Clone)]
pub struct Allocation {
    pub order: Vec<usize>,
    /// Size of the direct-channel allocation this one was derived from.
    pub i_direct: Option<usize>,
    pub c_mat: CMat,
    /// `R_i^H R_i = D_i D_i^H`.
    pub rr: CMat,
    /// Columns of `R` for the allocated users, `K x i`.
    pub r_block: CMat,
    /// Whether `C_i` goes through the rank-deficient route.
    pub singular: bool,
}

impl Allocation {
    pub fn new(cache: &SubspaceCache, order: Vec<usize>) -> Result<Self> {
        let k = cache.n_users();
        let mut seen = vec![false; k];
        for &u in &order {
            if u >= k {
                return Err(Error::Dimension(format!("user {u} out of range (K = {k})")));
            }
            if std::mem::replace(&mut seen[u], true) {
                return Err(Error::Domain(format!("user {u} allocated twice")));
            }
        }
        if order.len() > cache.n_bs.min(k) {
            return Err(Error::Dimension(format!(
                "{} users exceed min(N_B, K) = {}",
                order.len(),
                cache.n_bs.min(k)
            )));
        }
        let c_mat = principal_submatrix(&cache.c_full, &order);
        numerics::ops::record((order.len() * order.len()) as u64, order.len());
        let rr = principal_submatrix(&cache.gram_r, &order);
        let r_block = select_cols(&cache.r, &order);
        let singular = is_singular(&c_mat, cache.n_bs)?;
        Ok(Self {
            order,
            i_direct: None,
            c_mat,
            rr,
            r_block,
            singular,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, user: usize) -> bool {
        self.order.contains(&user)
    }

    pub fn extended(&self, cache: &SubspaceCache, user: usize) -> Result<Self> {
        let mut order = self.order.clone();
        order.push(user);
        let mut out = Self::new(cache, order)?;
        out.i_direct = self.i_direct;
        Ok(out)
    }

    /// Drops the users at the given positions of `order`.
    pub fn without_positions(&self, cache: &SubspaceCache, drop: &[usize]) -> Result<Self> {
        let order = self
            .order
            .iter()
            .enumerate()
            .filter(|(j, _)| !drop.contains(j))
            .map(|(_, &u)| u)
            .collect();
        let mut out = Self::new(cache, order)?;
        out.i_direct = self.i_direct;
        Ok(out)
    }

    /// Explicit `D_i`, `i x (N_R + 1)`.
    pub fn d_rows(&self, cache: &SubspaceCache) -> CMat {
        select_rows(&cache.d, &self.order)
    }
}

/// `C_i` is treated as singular when the allocation fills all BS antennas or
/// its condition number exceeds [`SINGULAR_COND`].
pub fn is_singular(c: &CMat, n_bs: usize) -> Result<bool> {
    if c.nrows() == 0 {
        return Ok(false);
    }
    if c.nrows() >= n_bs {
        return Ok(true);
    }
    Ok(hermitian_condition(&hermitian_evd(c)?) > SINGULAR_COND)
}

pub fn check_unit_modulus(theta: &CVec) -> Result<()> {
    for (n, z) in theta.iter().enumerate() {
        if (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL {
            return Err(Error::Domain(format!(
                "phase entry {n} has modulus {} (expected 1)",
                z.norm()
            )));
        }
    }
    Ok(())
}

/// `theta_bar = [theta; 1]`.
pub fn theta_bar(theta: &CVec) -> CVec {
    let n = theta.len();
    CVec::from_fn(n + 1, |i, _| if i < n { theta[i] } else { C64::new(1.0, 0.0) })
}

/// `H_c = H_cd + H_cr diag(theta) a b^H` for the given users.
pub fn composite_matrix(
    realization: &ChannelRealization,
    order: &[usize],
    theta: &CVec,
) -> Result<CMat> {
    if theta.len() != realization.n_ris() {
        return Err(Error::Dimension(format!(
            "theta has {} entries, RIS has {}",
            theta.len(),
            realization.n_ris()
        )));
    }
    check_unit_modulus(theta)?;
    let hd = select_rows(&realization.h_direct, order);
    let hr = select_rows(&realization.h_ris_user, order);
    let ta = theta.component_mul(&realization.a);
    let s = hr * ta;
    Ok(hd + s * realization.b.adjoint())
}

/// Composite channel for all users.
pub fn composite_all(realization: &ChannelRealization, theta: &CVec) -> Result<CMat> {
    let all: Vec<usize> = (0..realization.n_users()).collect();
    composite_matrix(realization, &all, theta)
}

/// `tr((C + D t t^H D^H)^-1 W)` through the inversion lemma, for invertible
/// `C` and positive diagonal `W`. `d` may be `D_i` with `t = theta_bar`, or
/// `R_i^H` with `t = u`.
pub fn frob_pinv_weighted(c: &CMat, d: &CMat, t: &CVec, weights: &[f64]) -> Result<f64> {
    let i = c.nrows();
    if d.nrows() != i || d.ncols() != t.len() || weights.len() != i {
        return Err(Error::Dimension("frob_pinv_weighted operand shapes".into()));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Domain("weights must be positive".into()));
    }
    let cond = hermitian_condition(&hermitian_evd(c)?);
    if cond > SINGULAR_COND {
        return Err(Error::Singular(cond));
    }
    let c_inv = inverse(c)?;
    let x = numerics::mul_vec(d, t);
    let y = numerics::mul_vec(&c_inv, &x);
    let base: f64 = (0..i).map(|j| weights[j] * c_inv[(j, j)].re).sum();
    let num: f64 = (0..i).map(|j| weights[j] * y[j].norm_sqr()).sum();
    let den = 1.0 + x.dotc(&y).re;
    Ok(base - num / den)
}

/// `lambda_j = 1 / ||H_c^+ e_j||^2`. Fails when `H_c` is rank deficient.
pub fn pinv_gains(h_c: &CMat) -> Result<Vec<f64>> {
    check_full_row_rank(h_c)?;
    let p = pseudoinverse(h_c);
    Ok((0..p.ncols())
        .map(|j| 1.0 / p.column(j).norm_squared())
        .collect())
}

fn check_full_row_rank(h_c: &CMat) -> Result<()> {
    let (rows, cols) = h_c.shape();
    if rows > cols {
        return Err(Error::Rank(format!("{rows} streams on {cols} antennas")));
    }
    let sv = h_c.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= ZF_RANK_TOL * max {
        return Err(Error::Rank(format!(
            "singular values span [{min:.3e}, {max:.3e}]"
        )));
    }
    Ok(())
}

/// Zero-forcing precoder `H_c^+ Lambda^1/2 Gamma^1/2` with the pseudoinverse
/// columns normalized by `Lambda`.
pub fn zf_precoder(h_c: &CMat, power: &PowerAllocation) -> Result<CMat> {
    check_full_row_rank(h_c)?;
    if power.powers.len() != h_c.nrows() {
        return Err(Error::Dimension(format!(
            "{} powers for {} streams",
            power.powers.len(),
            h_c.nrows()
        )));
    }
    let mut p = pseudoinverse(h_c);
    for j in 0..p.ncols() {
        let col_norm = p.column(j).norm();
        let scale = power.powers[j].max(0.0).sqrt() / col_norm;
        p.column_mut(j).scale_mut(scale);
    }
    Ok(p)
}

/// `sum_j log2(1 + lambda_j gamma_j)`.
pub fn sum_se(power: &PowerAllocation) -> Result<f64> {
    if power.gains.len() != power.powers.len() {
        return Err(Error::Dimension(format!(
            "{} gains vs {} powers",
            power.gains.len(),
            power.powers.len()
        )));
    }
    power
        .gains
        .iter()
        .zip(&power.powers)
        .map(|(&l, &g)| {
            let snr = l * g;
            if snr < 0.0 || !snr.is_finite() {
                Err(Error::Domain(format!("invalid stream SNR {snr}")))
            } else {
                Ok((1.0 + snr).log2())
            }
        })
        .sum()
}

/// Sum-SE from received signal and interference powers of `H_c P`, noise 1.
pub fn sinr_sum_se(h_c: &CMat, precoder: &CMat) -> f64 {
    let s = h_c * precoder;
    (0..s.nrows())
        .map(|j| {
            let signal = s[(j, j)].norm_sqr();
            let interference: f64 = (0..s.ncols())
                .filter(|&l| l != j)
                .map(|l| s[(j, l)].norm_sqr())
                .sum();
            (1.0 + signal / (1.0 + interference)).log2()
        })
        .sum()
}

/// Diagonal of `(H H^H)^-1` inverted, i.e. the ZF gains through the Gram matrix.
pub fn gram_gains(h: &CMat) -> Result<Vec<f64>> {
    let g = mul(h, &h.adjoint());
    let eig = hermitian_evd(&g)?;
    let cond = hermitian_condition(&eig);
    if cond > 1.0 / (ZF_RANK_TOL * ZF_RANK_TOL) {
        return Err(Error::Rank(format!("Gram condition number {cond:.3e}")));
    }
    let g_inv = inverse(&g)?;
    let gains: Vec<f64> = (0..g_inv.nrows()).map(|j| 1.0 / g_inv[(j, j)].re).collect();
    if gains.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Rank("non-positive ZF gain".into()));
    }
    Ok(gains)
}
