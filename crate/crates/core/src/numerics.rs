//! Dense complex linear-algebra kernels.
//!
//! Everything here is a pure function over owned or borrowed matrices. The
//! heavy lifting is delegated to `nalgebra`; this module pins down ordering,
//! tolerances and the small amount of glue the higher modules rely on.
//!
//! Each kernel reports a nominal arithmetic cost to [`ops`], a thread-local
//! counter used to check which problem dimensions a routine touches.

use nalgebra::{Complex, DMatrix, DVector};

use crate::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative singular-value cutoff for [`pseudoinverse`].
pub const PINV_RANK_TOL: f64 = 1e-12;

/// Nominal operation counter.
///
/// Costs are dimension-based (e.g. `m*n*k` for a product, `10 n^3` for an
/// EVD) so the count for a routine depends only on the shapes it works with,
/// never on the data.
pub mod ops {
    use std::cell::Cell;

    thread_local! {
        static COUNT: Cell<u64> = const { Cell::new(0) };
        static MAX_DIM: Cell<usize> = const { Cell::new(0) };
    }

    pub fn record(flops: u64, dim: usize) {
        COUNT.with(|c| c.set(c.get().wrapping_add(flops)));
        MAX_DIM.with(|m| m.set(m.get().max(dim)));
    }

    /// Runs `f` and returns its output with the operation count and the
    /// largest matrix dimension any counted kernel saw.
    pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64, usize) {
        let (c0, m0) = (COUNT.with(|c| c.get()), MAX_DIM.with(|m| m.replace(0)));
        let out = f();
        let count = COUNT.with(|c| c.get()).wrapping_sub(c0);
        let max_dim = MAX_DIM.with(|m| m.replace(m0.max(m.get())));
        (out, count, max_dim)
    }
}

#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Sorted descending.
    pub eigenvalues: DVector<f64>,
    /// Column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: CMat,
}

impl HermitianEig {
    pub fn max(&self) -> (f64, CVec) {
        (self.eigenvalues[0], self.eigenvectors.column(0).into_owned())
    }

    pub fn min(&self) -> (f64, CVec) {
        let last = self.eigenvalues.len() - 1;
        (
            self.eigenvalues[last],
            self.eigenvectors.column(last).into_owned(),
        )
    }
}

pub fn frob(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn real_diag(d: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(
        d.len(),
        d.iter().map(|&x| C64::new(x, 0.0)),
    ))
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

fn check_square(a: &CMat, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{what}: expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

/// Full eigendecomposition of a Hermitian matrix, spectrum descending.
///
/// The input is symmetrized as `(A + A^H)/2` first.
pub fn hermitian_evd(a: &CMat) -> Result<HermitianEig> {
    let n = check_square(a, "hermitian_evd")?;
    ops::record(10 * (n as u64).pow(3), n);
    if n == 0 {
        return Ok(HermitianEig {
            eigenvalues: DVector::zeros(0),
            eigenvectors: CMat::zeros(0, 0),
        });
    }
    let eig = hermitian_part(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = CMat::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Thin QR of an `m x n` matrix with `m >= n`: `Q` is `m x n` with
/// orthonormal columns, `R` is `n x n` upper triangular.
pub fn thin_qr(m: &CMat) -> Result<(CMat, CMat)> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(Error::Dimension(format!(
            "thin_qr needs rows >= cols, got {rows}x{cols}"
        )));
    }
    ops::record(4 * (rows * cols * cols) as u64, rows);
    let qr = m.clone().qr();
    Ok((qr.q(), qr.r()))
}

/// Moore-Penrose pseudoinverse via SVD, rank cutoff `1e-12 * sigma_max`.
pub fn pseudoinverse(m: &CMat) -> CMat {
    let (rows, cols) = m.shape();
    ops::record(20 * (rows.max(cols) * rows.min(cols).pow(2)) as u64, rows.max(cols));
    if rows == 0 || cols == 0 {
        return CMat::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = CMat::zeros(cols, rows);
    if s_max == 0.0 {
        return out;
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > PINV_RANK_TOL * s_max {
            let vk = v_t.row(k).adjoint();
            let uk = u.column(k);
            out += (vk * uk.adjoint()).unscale(s);
        }
    }
    out
}

/// Largest eigenvalue and a unit eigenvector of `A * diag(g)` for Hermitian
/// PSD `A` and strictly positive `g`.
///
/// Solved through the similar Hermitian matrix `diag(g)^1/2 A diag(g)^1/2`,
/// then mapped back with `diag(g)^-1/2` and renormalized.
pub fn principal_eigpair_psd_weighted(a: &CMat, g: &[f64]) -> Result<(f64, CVec)> {
    let n = check_square(a, "principal_eigpair_psd_weighted")?;
    if g.len() != n {
        return Err(Error::Dimension(format!(
            "weight length {} for {n}x{n} matrix",
            g.len()
        )));
    }
    if let Some(bad) = g.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Domain(format!("weights must be positive, got {bad}")));
    }
    let sq: Vec<f64> = g.iter().map(|x| x.sqrt()).collect();
    let s = CMat::from_fn(n, n, |i, j| a[(i, j)] * (sq[i] * sq[j]));
    let (lambda, y) = hermitian_evd(&s)?.max();
    let mut v = CVec::from_fn(n, |i, _| y[i] / sq[i]);
    let norm = v.norm();
    if norm > 0.0 {
        v.unscale_mut(norm);
    }
    Ok((lambda, v))
}

/// Counted matrix product.
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    ops::record(
        (a.nrows() * a.ncols() * b.ncols()) as u64,
        a.nrows().max(a.ncols()).max(b.ncols()),
    );
    a * b
}

/// Counted matrix-vector product.
pub fn mul_vec(a: &CMat, x: &CVec) -> CVec {
    ops::record((a.nrows() * a.ncols()) as u64, a.nrows().max(a.ncols()));
    a * x
}

/// Counted inverse of a square matrix (LU).
pub fn inverse(a: &CMat) -> Result<CMat> {
    let n = check_square(a, "inverse")?;
    ops::record((n as u64).pow(3), n);
    a.clone()
        .try_inverse()
        .ok_or(Error::Singular(f64::INFINITY))
}

/// Counted linear solve `A x = b` (LU).
pub fn solve(a: &CMat, b: &CVec) -> Result<CVec> {
    let n = check_square(a, "solve")?;
    ops::record((n as u64).pow(3) + (n as u64).pow(2), n);
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::Singular(f64::INFINITY))
}

/// `x^H A y` for square `A`.
pub fn sesq(x: &CVec, a: &CMat, y: &CVec) -> C64 {
    ops::record((a.nrows() * a.ncols()) as u64, a.nrows());
    x.dotc(&(a * y))
}

/// Real part of the quadratic form `x^H A x` (exact for Hermitian `A`).
pub fn quad(a: &CMat, x: &CVec) -> f64 {
    sesq(x, a, x).re
}

pub fn trace_re(a: &CMat) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).sum()
}

/// Ratio of largest to smallest eigenvalue of a Hermitian PSD matrix,
/// `inf` when the smallest is not positive.
pub fn hermitian_condition(eig: &HermitianEig) -> f64 {
    let n = eig.eigenvalues.len();
    if n == 0 {
        return 1.0;
    }
    let (hi, lo) = (eig.eigenvalues[0], eig.eigenvalues[n - 1]);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}
