//! Small dense linear-algebra helpers on top of `faer`.
//!
//! Everything here works on `faer::Mat<Complex64>`; the decompositions
//! themselves are delegated to `faer`.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = Mat<Complex64>;

/// Default relative cutoff for pseudoinverses, applied to the largest
/// singular value.
pub const PINV_RCOND: f64 = 1e-12;

pub fn zeros(rows: usize, cols: usize) -> CMat {
    Mat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { Complex64::ONE } else { Complex64::ZERO })
}

/// Builds a matrix from row-major nested data. Used mostly in tests.
pub fn from_rows(rows: &[Vec<Complex64>]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

pub fn conj(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].conj())
}

pub fn adjoint(a: &CMat) -> CMat {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)].conj())
}

pub fn transpose(a: &CMat) -> CMat {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)])
}

pub fn frobenius_sqr(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.col_as_slice(j).iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum()
}

/// Rows `start..start + count` as an owned matrix.
pub fn row_block(a: &CMat, start: usize, count: usize) -> CMat {
    Mat::from_fn(count, a.ncols(), |i, j| a[(start + i, j)])
}

pub fn col_block(a: &CMat, start: usize, count: usize) -> CMat {
    Mat::from_fn(a.nrows(), count, |i, j| a[(i, start + j)])
}

pub fn col_vec(a: &CMat, j: usize) -> Vec<Complex64> {
    a.col_as_slice(j).to_vec()
}

/// Vandermonde matrix with `rows` rows: column `l` is `(1, z_l, z_l^2, ...)`.
pub fn vandermonde(generators: &[Complex64], rows: usize) -> CMat {
    let mut out = zeros(rows, generators.len());
    for (l, &z) in generators.iter().enumerate() {
        let col = out.col_as_slice_mut(l);
        let mut p = Complex64::ONE;
        for v in col.iter_mut() {
            *v = p;
            p *= z;
        }
    }
    out
}

/// Singular values in non-increasing order.
pub fn singular_values(a: &CMat) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    a.singular_values()
        .map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))
}

/// Number of singular values above `tol_rel * sigma_max`.
pub fn numerical_rank(a: &CMat, tol_rel: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let Some(&smax) = s.first() else {
        return Ok(0);
    };
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > tol_rel * smax).count())
}

/// Default rank tolerance `max(m, n) * eps`, relative to the largest singular value.
pub fn default_rank_tol(a: &CMat) -> f64 {
    a.nrows().max(a.ncols()) as f64 * f64::EPSILON
}

/// Thin SVD, returning `(U, s, V)` with `s` non-increasing.
pub fn thin_svd(a: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))?;
    let s = svd.S().column_vector().iter().map(|z| z.re).collect();
    Ok((svd.U().to_owned(), s, svd.V().to_owned()))
}

/// Moore-Penrose pseudoinverse through the SVD, discarding singular values
/// below `rcond * sigma_max`.
pub fn pinv(a: &CMat, rcond: f64) -> Result<CMat> {
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 {
        return Ok(zeros(n, m));
    }
    let (u, s, v) = thin_svd(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let mut vs = v;
    for (j, &sj) in s.iter().enumerate() {
        let inv = if smax > 0.0 && sj > rcond * smax { 1.0 / sj } else { 0.0 };
        for x in vs.col_as_slice_mut(j) {
            *x *= inv;
        }
    }
    Ok(&vs * u.adjoint())
}

/// Pseudoinverse of a Hermitian positive semidefinite matrix through its
/// eigendecomposition. Returns the inverse and whether any eigenvalue was cut.
pub fn pinv_hermitian(a: &CMat, rcond: f64) -> Result<(CMat, bool)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((zeros(0, 0), false));
    }
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("hermitian eigendecomposition failed: {e:?}")))?;
    let vals: Vec<f64> = evd.S().column_vector().iter().map(|z| z.re).collect();
    let vmax = vals.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
    let u = evd.U().to_owned();
    let mut scaled = u.clone();
    let mut cut = false;
    for (j, &lam) in vals.iter().enumerate() {
        let inv = if vmax > 0.0 && lam > rcond * vmax {
            1.0 / lam
        } else {
            cut = true;
            0.0
        };
        for x in scaled.col_as_slice_mut(j) {
            *x *= inv;
        }
    }
    Ok((&scaled * u.adjoint(), cut))
}

/// 2-norm condition number from singular values.
pub fn condition_number(a: &CMat) -> Result<f64> {
    let s = singular_values(a)?;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => Ok(hi / lo),
        _ => Ok(f64::INFINITY),
    }
}

/// Least-squares ratio `z` minimizing `||bottom - z * top||`.
pub fn shift_ratio(top: &[Complex64], bottom: &[Complex64]) -> Option<Complex64> {
    debug_assert_eq!(top.len(), bottom.len());
    let den: f64 = top.iter().map(|z| z.norm_sqr()).sum();
    let num: Complex64 = top.iter().zip(bottom).map(|(t, b)| t.conj() * b).sum();
    let scale: f64 = bottom.iter().map(|z| z.norm_sqr()).sum::<f64>().max(den);
    if den <= 1e-300 || den <= 1e-28 * scale {
        None
    } else {
        Some(num / den)
    }
}

/// Projects onto the unit circle; zero maps to one.
pub fn unit(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 0.0 && r.is_finite() {
        z / r
    } else {
        Complex64::ONE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn pinv_of_full_rank_square_is_inverse() {
        let a = from_rows(&[vec![c(2.0, 1.0), c(0.0, 1.0)], vec![c(1.0, 0.0), c(3.0, -1.0)]]);
        let p = pinv(&a, PINV_RCOND).unwrap();
        let prod = &a * &p;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - c(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_pinv_matches_svd_pinv() {
        let b = from_rows(&[
            vec![c(1.0, 0.5), c(0.0, 1.0), c(2.0, 0.0)],
            vec![c(1.0, 0.0), c(3.0, -1.0), c(0.5, 0.5)],
        ]);
        // rank-2 Gram of size 3
        let g = &adjoint(&b) * &b;
        let (ph, cut) = pinv_hermitian(&g, 1e-12).unwrap();
        assert!(cut);
        let ps = pinv(&g, 1e-12).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((ph[(i, j)] - ps[(i, j)]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn vandermonde_columns() {
        let v = vandermonde(&[c(0.0, 1.0), c(2.0, 0.0)], 3);
        assert_eq!(v[(2, 0)], c(-1.0, 0.0));
        assert_eq!(v[(2, 1)], c(4.0, 0.0));
        assert_eq!(v[(0, 1)], c(1.0, 0.0));
    }

    #[test]
    fn shift_ratio_exact() {
        let z = Complex64::from_polar(1.0, 0.7);
        let v: Vec<_> = (0..5).map(|k| z.powu(k)).collect();
        let r = shift_ratio(&v[..4], &v[1..]).unwrap();
        assert!((r - z).norm() < 1e-14);
        assert!(shift_ratio(&[Complex64::ZERO], &[Complex64::ONE]).is_none());
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let u = from_rows(&[vec![c(1.0, 0.0)], vec![c(0.0, 2.0)], vec![c(-1.0, 1.0)]]);
        let w = from_rows(&[vec![c(1.0, 1.0), c(2.0, 0.0)]]);
        let a = &u * &w;
        assert_eq!(numerical_rank(&a, default_rank_tol(&a)).unwrap(), 1);
    }
}
