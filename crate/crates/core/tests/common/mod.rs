//! Independent reference implementations for the integration tests.
//!
//! Nothing here calls the library's linear algebra: inverses use
//! Gauss-Jordan elimination, Hermitian spectra come from cyclic Jacobi on the
//! real 2n x 2n embedding, and generalized problems go through a hand-rolled
//! Cholesky factor.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_zf::channel::ChannelRealization;
use ris_zf::{CMat, CVec, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cgauss<R: Rng>(rng: &mut R) -> C64 {
    // Box-Muller keeps the oracle free of the library's sampler.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    let r = (-u1.ln()).sqrt();
    C64::from_polar(r, 2.0 * std::f64::consts::PI * u2)
}

pub fn rand_cmat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cgauss(rng))
}

pub fn rand_cvec<R: Rng>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| cgauss(rng))
}

pub fn rand_phases<R: Rng>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| {
        C64::from_polar(1.0, 2.0 * std::f64::consts::PI * rng.random::<f64>())
    })
}

pub fn rand_weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| 0.1 + 3.0 * rng.random::<f64>()).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Plain triple-loop product.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows());
    let mut out = CMat::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = zero();
            for k in 0..a.ncols() {
                s += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

pub fn adjoint(a: &CMat) -> CMat {
    CMat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)].conj())
}

pub fn trace(a: &CMat) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

/// Gauss-Jordan inverse with partial pivoting. Panics on exact singularity.
pub fn gj_inverse(a: &CMat) -> CMat {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut inv = CMat::identity(n, n);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[(x, col)].norm().total_cmp(&m[(y, col)].norm()))
            .unwrap();
        assert!(m[(piv, col)].norm() > 0.0, "singular matrix");
        m.swap_rows(col, piv);
        inv.swap_rows(col, piv);
        let p = m[(col, col)];
        for j in 0..n {
            m[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[(r, col)];
                if f != zero() {
                    for j in 0..n {
                        let (mc, ic) = (m[(col, j)], inv[(col, j)]);
                        m[(r, j)] -= f * mc;
                        inv[(r, j)] -= f * ic;
                    }
                }
            }
        }
    }
    inv
}

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi, descending.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_sym(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Hermitian eigenvalues, descending. The real embedding doubles every
/// eigenvalue, so every second one is kept.
pub fn herm_eigenvalues(h: &CMat) -> Vec<f64> {
    let n = h.nrows();
    let mut m = vec![vec![0.0; 2 * n]; 2 * n];
    for i in 0..n {
        for j in 0..n {
            let z = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
            m[i][j] = z.re;
            m[i + n][j + n] = z.re;
            m[i][j + n] = -z.im;
            m[i + n][j] = z.im;
        }
    }
    jacobi_sym(m).into_iter().step_by(2).collect()
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(b: &CMat) -> CMat {
    let n = b.nrows();
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = b[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        assert!(d > 0.0, "not positive definite");
        let d = d.sqrt();
        l[(j, j)] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = b[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    l
}

/// Largest `lambda` with `P w = lambda B w`, `B` positive definite.
pub fn generalized_max_eig(p: &CMat, b: &CMat) -> f64 {
    let l_inv = gj_inverse(&cholesky(b));
    let m = matmul(&matmul(&l_inv, p), &adjoint(&l_inv));
    herm_eigenvalues(&m)[0]
}

/// Principal eigenvalue by power iteration on a PSD matrix.
pub fn power_iteration(a: &CMat, iters: usize) -> f64 {
    let n = a.nrows();
    let mut x = CVec::from_fn(n, |i, _| C64::new(1.0 + i as f64 * 0.37, 0.1 * i as f64));
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = CVec::from_fn(n, |i, _| (0..n).map(|j| a[(i, j)] * x[j]).sum());
        let norm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = (0..n).map(|i| (x[i].conj() * y[i]).re).sum::<f64>()
            / x.iter().map(|z| z.norm_sqr()).sum::<f64>();
        x = y.unscale(norm);
    }
    lambda
}

pub fn diag(w: &[f64]) -> CMat {
    CMat::from_fn(w.len(), w.len(), |i, j| {
        if i == j {
            C64::new(w[i], 0.0)
        } else {
            zero()
        }
    })
}

/// `tr((C + x x^H)^-1 W)` by explicit inversion.
pub fn dense_weighted_trace(c: &CMat, x: &CVec, w: &[f64]) -> f64 {
    let m = c + x * x.adjoint();
    trace(&matmul(&gj_inverse(&m), &diag(w)))
}

/// `C = H_d (I - b b^H) H_d^H` for the given rows, from loops.
pub fn oracle_c(r: &ChannelRealization, users: &[usize]) -> CMat {
    let nb = r.n_bs();
    let proj = CMat::from_fn(nb, nb, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        C64::new(id, 0.0) - r.b[i] * r.b[j].conj()
    });
    let h = CMat::from_fn(users.len(), nb, |i, j| r.h_direct[(users[i], j)]);
    matmul(&matmul(&h, &proj), &adjoint(&h))
}

/// Rows `[h_r^H diag(a), h_d^H b]` for the given users.
pub fn oracle_d(r: &ChannelRealization, users: &[usize]) -> CMat {
    let (nr, nb) = (r.n_ris(), r.n_bs());
    CMat::from_fn(users.len(), nr + 1, |i, n| {
        let u = users[i];
        if n < nr {
            r.h_ris_user[(u, n)] * r.a[n]
        } else {
            (0..nb).map(|m| r.h_direct[(u, m)] * r.b[m]).sum()
        }
    })
}

/// Composite channel rows from the definition.
pub fn oracle_composite(r: &ChannelRealization, users: &[usize], theta: &CVec) -> CMat {
    let (nr, nb) = (r.n_ris(), r.n_bs());
    CMat::from_fn(users.len(), nb, |i, m| {
        let u = users[i];
        let cascade: C64 = (0..nr).map(|n| r.h_ris_user[(u, n)] * theta[n] * r.a[n]).sum();
        r.h_direct[(u, m)] + cascade * r.b[m].conj()
    })
}

/// Waterfilling by bisection on the water level.
pub fn waterfill_bisect(gains: &[f64], ptx: f64) -> Vec<f64> {
    let alloc = |mu: f64| -> Vec<f64> { gains.iter().map(|&g| (mu - 1.0 / g).max(0.0)).collect() };
    let (mut lo, mut hi) = (0.0, ptx + gains.iter().map(|g| 1.0 / g).fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alloc(mid).iter().sum::<f64>() > ptx {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    alloc(0.5 * (lo + hi))
}

pub fn sum_rate(gains: &[f64], powers: &[f64]) -> f64 {
    gains.iter().zip(powers).map(|(g, p)| (1.0 + g * p).log2()).sum()
}

/// Waterfilled ZF sum rate of the rows of `h` from the Gram inverse diagonal.
pub fn zf_rate(h: &CMat, ptx: f64) -> f64 {
    let g = gj_inverse(&matmul(h, &adjoint(h)));
    let gains: Vec<f64> = (0..g.nrows()).map(|j| 1.0 / g[(j, j)].re).collect();
    sum_rate(&gains, &waterfill_bisect(&gains, ptx))
}
