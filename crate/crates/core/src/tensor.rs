//! Dense fourth-order complex tensors and the structured products used by
//! the CP model.
//!
//! Storage is first-mode-fastest: the 0-based multi-index `(i1, i2, i3, i4)`
//! lives at `i1 + i2*I1 + i3*I1*I2 + i4*I1*I2*I3`. Every unfolding and
//! Khatri-Rao ordering in the crate is written against this layout.

use faer::Mat;
use num_complex::Complex64;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, CMat};

/// Dense `I1 x I2 x I3 x I4` complex array.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor4 {
    dims: [usize; 4],
    data: Vec<Complex64>,
}

impl ComplexTensor4 {
    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self { dims, data: vec![Complex64::ZERO; dims.iter().product()] })
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<Complex64>) -> Result<Self> {
        check_dims(dims)?;
        let n: usize = dims.iter().product();
        if data.len() != n {
            return shape_err(format!("data length {} does not match dims {dims:?}", data.len()));
        }
        Ok(Self { dims, data })
    }

    /// Fills each entry from its 0-based multi-index.
    pub fn from_fn(
        dims: [usize; 4],
        mut f: impl FnMut(usize, usize, usize, usize) -> Complex64,
    ) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        let [n1, n2, n3, n4] = dims;
        let mut p = 0;
        for i4 in 0..n4 {
            for i3 in 0..n3 {
                for i2 in 0..n2 {
                    for i1 in 0..n1 {
                        t.data[p] = f(i1, i2, i3, i4);
                        p += 1;
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i1: usize, i2: usize, i3: usize, i4: usize) -> usize {
        let [n1, n2, n3, _] = self.dims;
        i1 + n1 * (i2 + n2 * (i3 + n3 * i4))
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize, i3: usize, i4: usize) -> Complex64 {
        self.data[self.offset(i1, i2, i3, i4)]
    }

    #[inline]
    pub fn set(&mut self, i1: usize, i2: usize, i3: usize, i4: usize, v: Complex64) {
        let p = self.offset(i1, i2, i3, i4);
        self.data[p] = v;
    }

    pub fn frobenius_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self { dims: self.dims, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        same_dims(self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Copies the subcarrier (third-mode) slices listed in `indices` (0-based).
    pub fn select_mode3(&self, indices: &[usize]) -> Result<Self> {
        let [n1, n2, n3, n4] = self.dims;
        if let Some(&bad) = indices.iter().find(|&&k| k >= n3) {
            return Err(Error::InvalidArgument(format!("mode-3 index {bad} out of range {n3}")));
        }
        Self::from_fn([n1, n2, indices.len(), n4], |a, b, k, p| self.get(a, b, indices[k], p))
    }
}

fn check_dims(dims: [usize; 4]) -> Result<()> {
    if dims.contains(&0) {
        return shape_err(format!("every dimension must be >= 1, got {dims:?}"));
    }
    Ok(())
}

fn same_dims(a: &ComplexTensor4, b: &ComplexTensor4) -> Result<()> {
    if a.dims != b.dims {
        return shape_err(format!("tensor dims differ: {:?} vs {:?}", a.dims, b.dims));
    }
    Ok(())
}

/// The four CP factor matrices; column `r` of each forms the `r`-th rank-1 term.
#[derive(Debug, Clone)]
pub struct FactorSet {
    pub a1: CMat,
    pub a2: CMat,
    pub a3: CMat,
    pub a4: CMat,
}

impl FactorSet {
    pub fn new(a1: CMat, a2: CMat, a3: CMat, a4: CMat) -> Result<Self> {
        let r = a1.ncols();
        if r == 0 || a2.ncols() != r || a3.ncols() != r || a4.ncols() != r {
            return shape_err(format!(
                "factor column counts must agree and be >= 1: {}, {}, {}, {}",
                a1.ncols(),
                a2.ncols(),
                a3.ncols(),
                a4.ncols()
            ));
        }
        Ok(Self { a1, a2, a3, a4 })
    }

    pub fn rank(&self) -> usize {
        self.a1.ncols()
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.a1.nrows(), self.a2.nrows(), self.a3.nrows(), self.a4.nrows()]
    }

    pub fn factor(&self, mode: usize) -> Result<&CMat> {
        match mode {
            1 => Ok(&self.a1),
            2 => Ok(&self.a2),
            3 => Ok(&self.a3),
            4 => Ok(&self.a4),
            n => Err(Error::InvalidMode(n)),
        }
    }
}

/// Mode-`n` unfolding (`n` in 1..=4). Column index combines the remaining
/// modes in ascending order with the lowest remaining mode varying fastest.
pub fn mode_n_unfold(x: &ComplexTensor4, n: usize) -> Result<CMat> {
    if !(1..=4).contains(&n) {
        return Err(Error::InvalidMode(n));
    }
    let dims = x.dims;
    let m = n - 1;
    let rows = dims[m];
    let cols = x.len() / rows;
    let mut out = linalg::zeros(rows, cols);
    let others: Vec<usize> = (0..4).filter(|&d| d != m).collect();
    let mut idx = [0usize; 4];
    for (p, &v) in x.data.iter().enumerate() {
        let mut q = p;
        for (d, slot) in idx.iter_mut().enumerate() {
            *slot = q % dims[d];
            q /= dims[d];
        }
        let mut col = 0;
        let mut stride = 1;
        for &d in &others {
            col += idx[d] * stride;
            stride *= dims[d];
        }
        out[(idx[m], col)] = v;
    }
    Ok(out)
}

/// Inverse of [`mode_n_unfold`].
pub fn mode_n_fold(mat: &CMat, n: usize, dims: [usize; 4]) -> Result<ComplexTensor4> {
    if !(1..=4).contains(&n) {
        return Err(Error::InvalidMode(n));
    }
    let m = n - 1;
    let total: usize = dims.iter().product();
    if mat.nrows() != dims[m] || mat.nrows() * mat.ncols() != total {
        return shape_err(format!(
            "{}x{} matrix cannot fold into {dims:?} along mode {n}",
            mat.nrows(),
            mat.ncols()
        ));
    }
    let others: Vec<usize> = (0..4).filter(|&d| d != m).collect();
    ComplexTensor4::from_fn(dims, |a, b, c, d| {
        let idx = [a, b, c, d];
        let mut col = 0;
        let mut stride = 1;
        for &o in &others {
            col += idx[o] * stride;
            stride *= dims[o];
        }
        mat[(idx[m], col)]
    })
}

/// Column-wise Kronecker product; the row index of `a` varies slowest.
pub fn khatri_rao(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.ncols() != b.ncols() {
        return shape_err(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        ));
    }
    let (m, n) = (a.nrows(), b.nrows());
    let mut out = linalg::zeros(m * n, a.ncols());
    for r in 0..a.ncols() {
        let ac = a.col_as_slice(r);
        let bc = b.col_as_slice(r);
        let oc = out.col_as_slice_mut(r);
        for (i, &x) in ac.iter().enumerate() {
            for (j, &y) in bc.iter().enumerate() {
                oc[i * n + j] = x * y;
            }
        }
    }
    Ok(out)
}

/// Khatri-Rao product of a sequence, leftmost factor slowest.
pub fn khatri_rao_chain(factors: &[&CMat]) -> Result<CMat> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty khatri-rao chain".into()))?;
    let mut acc = (*first).clone();
    for f in rest {
        acc = khatri_rao(&acc, f)?;
    }
    Ok(acc)
}

pub fn kronecker(a: &CMat, b: &CMat) -> CMat {
    let (p, q) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * p, a.ncols() * q, |i, j| a[(i / p, j / q)] * b[(i % p, j % q)])
}

pub fn hadamard(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return shape_err(format!(
            "hadamard needs equal shapes, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        ));
    }
    Ok(Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * b[(i, j)]))
}

/// Sums the rank-1 terms of `f` into a tensor of shape `dims`.
///
/// Evaluated as `(A2 ⊙ A1)(A4 ⊙ A3)ᵀ`, whose column-major storage is exactly
/// the tensor layout.
pub fn cp_reconstruct(f: &FactorSet, dims: [usize; 4]) -> Result<ComplexTensor4> {
    if f.dims() != dims {
        return shape_err(format!("factor rows {:?} do not match dims {dims:?}", f.dims()));
    }
    let left = khatri_rao(&f.a2, &f.a1)?;
    let right = khatri_rao(&f.a4, &f.a3)?;
    let prod = &left * right.transpose();
    let mut data = Vec::with_capacity(dims.iter().product());
    for j in 0..prod.ncols() {
        data.extend_from_slice(prod.col_as_slice(j));
    }
    ComplexTensor4::from_vec(dims, data)
}

/// `||x - xhat||_F^2 / ||x||_F^2`.
pub fn relative_error(x: &ComplexTensor4, xhat: &ComplexTensor4) -> Result<f64> {
    same_dims(x, xhat)?;
    let den = x.frobenius_sqr();
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let num: f64 = x.data.iter().zip(&xhat.data).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ones(dims: [usize; 4]) -> ComplexTensor4 {
        ComplexTensor4::from_fn(dims, |_, _, _, _| Complex64::ONE).unwrap()
    }

    fn rand_mat(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMat {
        Mat::from_fn(m, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(ComplexTensor4::zeros([2, 0, 1, 1]).is_err());
        assert!(ComplexTensor4::from_vec([2, 2, 1, 1], vec![Complex64::ZERO; 3]).is_err());
    }

    #[test]
    fn unfold_all_ones_mode4() {
        let u = mode_n_unfold(&ones([2, 2, 2, 2]), 4).unwrap();
        assert_eq!((u.nrows(), u.ncols()), (2, 8));
        for i in 0..2 {
            for j in 0..8 {
                assert_eq!(u[(i, j)], Complex64::ONE);
            }
        }
    }

    #[test]
    fn unfold_delta_mode1() {
        let mut x = ComplexTensor4::zeros([3, 2, 2, 2]).unwrap();
        x.set(0, 0, 0, 0, Complex64::ONE);
        let u = mode_n_unfold(&x, 1).unwrap();
        for i in 0..3 {
            for j in 0..8 {
                let want = if (i, j) == (0, 0) { 1.0 } else { 0.0 };
                assert_eq!(u[(i, j)], c(want, 0.0));
            }
        }
    }

    #[test]
    fn unfold_linear_offsets_mode4() {
        // entry value = linear offset + 1; the mode-4 rows then read 1..8 and 9..16
        let mut v = 0.0;
        let x = ComplexTensor4::from_fn([2, 2, 2, 2], |_, _, _, _| {
            v += 1.0;
            c(v, 0.0)
        })
        .unwrap();
        let u = mode_n_unfold(&x, 4).unwrap();
        for j in 0..8 {
            assert_eq!(u[(0, j)], c(j as f64 + 1.0, 0.0));
            assert_eq!(u[(1, j)], c(j as f64 + 9.0, 0.0));
        }
    }

    #[test]
    fn invalid_mode() {
        let x = ones([1, 1, 1, 1]);
        assert!(matches!(mode_n_unfold(&x, 0), Err(Error::InvalidMode(0))));
        assert!(matches!(mode_n_unfold(&x, 5), Err(Error::InvalidMode(5))));
    }

    #[test]
    fn khatri_rao_examples() {
        let one = Mat::from_fn(2, 1, |_, _| Complex64::ONE);
        let k = khatri_rao(&one, &one).unwrap();
        assert_eq!((k.nrows(), k.ncols()), (4, 1));
        assert!((0..4).all(|i| k[(i, 0)] == Complex64::ONE));

        let i2 = linalg::identity(2);
        let k = khatri_rao(&i2, &i2).unwrap();
        let want = [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 1.0]];
        for i in 0..4 {
            for j in 0..2 {
                assert_eq!(k[(i, j)], c(want[i][j], 0.0));
            }
        }

        let z = c(0.3, -1.2);
        let w = c(2.0, 0.5);
        let a = linalg::from_rows(&[vec![Complex64::ONE], vec![z]]);
        let b = linalg::from_rows(&[vec![Complex64::ONE], vec![w]]);
        let k = khatri_rao(&a, &b).unwrap();
        let want = [Complex64::ONE, w, z, z * w];
        for i in 0..4 {
            assert_eq!(k[(i, 0)], want[i]);
        }

        assert!(khatri_rao(&linalg::identity(2), &one).is_err());
    }

    #[test]
    fn kronecker_examples() {
        let k = kronecker(&linalg::identity(2), &linalg::identity(2));
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(k[(i, j)], if i == j { Complex64::ONE } else { Complex64::ZERO });
            }
        }

        let b = linalg::from_rows(&[vec![c(1.0, 1.0), c(0.0, 2.0)], vec![c(3.0, 0.0), c(-1.0, 0.0)]]);
        let k = kronecker(&linalg::from_rows(&[vec![c(2.0, 0.0)]]), &b);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(k[(i, j)], b[(i, j)] * 2.0);
            }
        }

        let swap = linalg::from_rows(&[
            vec![Complex64::ZERO, Complex64::ONE],
            vec![Complex64::ONE, Complex64::ZERO],
        ]);
        let k = kronecker(&linalg::identity(2), &swap);
        let want = [[0., 1., 0., 0.], [1., 0., 0., 0.], [0., 0., 0., 1.], [0., 0., 1., 0.]];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(k[(i, j)], c(want[i][j], 0.0));
            }
        }
    }

    #[test]
    fn hadamard_examples() {
        let a = linalg::from_rows(&[vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(3.0, 0.0), c(4.0, 0.0)]]);
        let twos = Mat::from_fn(2, 2, |_, _| c(2.0, 0.0));
        let h = hadamard(&a, &twos).unwrap();
        let want = [[2.0, 4.0], [6.0, 8.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(h[(i, j)], c(want[i][j], 0.0));
            }
        }
        let onesm = Mat::from_fn(2, 2, |_, _| Complex64::ONE);
        assert_eq!(hadamard(&a, &onesm).unwrap(), a);
        let z = hadamard(&a, &linalg::zeros(2, 2)).unwrap();
        assert!(linalg::frobenius_sqr(&z) == 0.0);
        assert!(hadamard(&a, &linalg::zeros(2, 3)).is_err());
    }

    #[test]
    fn cp_reconstruct_rank_one_cases() {
        let o = |n| Mat::from_fn(n, 1, |_, _| Complex64::ONE);
        let f = FactorSet::new(o(2), o(3), o(2), o(2)).unwrap();
        assert_eq!(cp_reconstruct(&f, [2, 3, 2, 2]).unwrap(), ones([2, 3, 2, 2]));

        let e1 = |n| Mat::from_fn(n, 1, |i, _| if i == 0 { Complex64::ONE } else { Complex64::ZERO });
        let f = FactorSet::new(e1(2), e1(2), e1(2), e1(2)).unwrap();
        let x = cp_reconstruct(&f, [2, 2, 2, 2]).unwrap();
        assert_eq!(x.get(0, 0, 0, 0), Complex64::ONE);
        assert_eq!(x.frobenius_sqr(), 1.0);

        assert!(cp_reconstruct(&f, [2, 2, 2, 3]).is_err());
    }

    #[test]
    fn cp_reconstruct_rank_two_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = FactorSet::new(
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
        )
        .unwrap();
        let x = cp_reconstruct(&f, [2, 2, 2, 2]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for cc in 0..2 {
                    for d in 0..2 {
                        let mut s = Complex64::ZERO;
                        for r in 0..2 {
                            s += f.a1[(a, r)] * f.a2[(b, r)] * f.a3[(cc, r)] * f.a4[(d, r)];
                        }
                        assert!((x.get(a, b, cc, d) - s).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn relative_error_examples() {
        let x = ComplexTensor4::from_fn([2, 1, 3, 1], |a, _, cc, _| c(a as f64 + 1.0, cc as f64)).unwrap();
        assert_eq!(relative_error(&x, &x).unwrap(), 0.0);
        let z = ComplexTensor4::zeros(x.dims()).unwrap();
        assert_eq!(relative_error(&x, &z).unwrap(), 1.0);
        let two = x.scaled(c(2.0, 0.0));
        assert!((relative_error(&x, &two).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(relative_error(&z, &x), Err(Error::ZeroNorm)));
    }
}
