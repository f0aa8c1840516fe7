//! Unstructured CP decomposition by alternating least squares.
//!
//! Used as the reference refinement: no Vandermonde structure is imposed,
//! so each factor is an arbitrary complex matrix.

use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::Side;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::tensor::{cp_reconstruct, hadamard, khatri_rao_chain, mode_n_unfold, ComplexTensor4, FactorSet};
use crate::vsd_fort::recover_delays;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AlsInit {
    Random,
    /// Leading left singular vectors of each unfolding.
    #[default]
    SvdBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsOptions {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the fit changes by less than this between sweeps.
    pub rel_tol: f64,
    pub init: AlsInit,
    pub seed: u64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self { rank: 1, max_iters: 200, rel_tol: 1e-10, init: AlsInit::SvdBased, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct AlsResult {
    pub factors: FactorSet,
    /// Fit `1 − ‖X − X̂‖/‖X‖` after initialization and after every sweep.
    pub fit_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the input is zero; factors are zero and the fit is 1.
    pub degenerate: bool,
}

impl AlsResult {
    pub fn fit(&self) -> f64 {
        self.fit_history.last().copied().unwrap_or(0.0)
    }
}

fn rand_c(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn init_factor(unf: &CMat, r: usize, init: AlsInit, rng: &mut impl Rng) -> Result<CMat> {
    let rows = unf.nrows();
    let mut a = CMat::from_fn(rows, r, |_, _| rand_c(rng));
    if init == AlsInit::SvdBased {
        let (u, _, _) = linalg::thin_svd(unf)?;
        // columns beyond the unfolding rank keep their random start
        for j in 0..r.min(u.ncols()) {
            a.col_as_slice_mut(j).copy_from_slice(u.col_as_slice(j));
        }
    }
    Ok(a)
}

fn fit_of(x: &ComplexTensor4, f: &FactorSet, norm: f64) -> Result<f64> {
    let y = cp_reconstruct(f, x.dims())?;
    let err: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(1.0 - err.sqrt() / norm)
}

/// Exact least-squares update of factor `mode` (0-based) with the others fixed:
/// `A_n = X_(n)·conj(KR)·pinv(conj(Hadamard of Grams))`.
pub fn update_factor(unf: &CMat, factors: &[CMat; 4], mode: usize) -> Result<CMat> {
    // unfolding columns have the lowest remaining mode fastest, so the
    // Khatri-Rao chain runs from the highest remaining mode down
    let others: Vec<&CMat> = (0..4).rev().filter(|&d| d != mode).map(|d| &factors[d]).collect();
    let kr = khatri_rao_chain(&others)?;
    let mut g: Option<CMat> = None;
    for a in &others {
        let ga = a.adjoint() * *a;
        g = Some(match g {
            None => ga,
            Some(acc) => hadamard(&acc, &ga)?,
        });
    }
    let g = g.ok_or_else(|| Error::InvalidArgument("no other factors".into()))?;
    let gc = linalg::conj(&g);
    let rhs = unf * kr.conjugate();
    // A·Gc = rhs with Gc Hermitian, so Aᴴ = Gc⁻¹·rhsᴴ
    if let Ok(llt) = gc.llt(Side::Lower) {
        let sol = llt.solve(linalg::adjoint(&rhs));
        if (0..sol.ncols()).all(|j| sol.col_as_slice(j).iter().all(|z| z.is_finite())) {
            return Ok(linalg::adjoint(&sol));
        }
    }
    let (ginv, _) = linalg::pinv_hermitian(&gc, linalg::PINV_RCOND)?;
    Ok(&rhs * &ginv)
}

/// CP-ALS with `opts.rank` components.
pub fn cp_als(x: &ComplexTensor4, opts: &AlsOptions) -> Result<AlsResult> {
    let dims = x.dims();
    let r = opts.rank;
    if r == 0 || opts.max_iters == 0 || !(opts.rel_tol > 0.0) {
        return Err(Error::InvalidArgument("rank, max_iters and rel_tol must be positive".into()));
    }
    let total: usize = dims.iter().product();
    let limit = dims.iter().map(|d| total / d).min().unwrap_or(0);
    if r > limit {
        return Err(Error::InvalidArgument(format!("rank {r} exceeds the unfolding limit {limit}")));
    }
    let norm = x.frobenius_sqr().sqrt();
    if norm == 0.0 {
        let zero = |n: usize| linalg::zeros(n, r);
        return Ok(AlsResult {
            factors: FactorSet::new(zero(dims[0]), zero(dims[1]), zero(dims[2]), zero(dims[3]))?,
            fit_history: vec![1.0],
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }

    let unfs = [
        mode_n_unfold(x, 1)?,
        mode_n_unfold(x, 2)?,
        mode_n_unfold(x, 3)?,
        mode_n_unfold(x, 4)?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut f = [
        init_factor(&unfs[0], r, opts.init, &mut rng)?,
        init_factor(&unfs[1], r, opts.init, &mut rng)?,
        init_factor(&unfs[2], r, opts.init, &mut rng)?,
        init_factor(&unfs[3], r, opts.init, &mut rng)?,
    ];
    let set = |f: &[CMat; 4]| FactorSet::new(f[0].clone(), f[1].clone(), f[2].clone(), f[3].clone());
    // the initial fit is only defined once A4 is consistent with the others
    f[3] = update_factor(&unfs[3], &f, 3)?;
    let mut history = vec![fit_of(x, &set(&f)?, norm)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        for mode in 0..4 {
            f[mode] = update_factor(&unfs[mode], &f, mode)?;
        }
        iterations += 1;
        let fit = fit_of(x, &set(&f)?, norm)?;
        let prev = history[history.len() - 1];
        history.push(fit);
        if (fit - prev).abs() < opts.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(AlsResult { factors: set(&f)?, fit_history: history, iterations, converged, degenerate: false })
}

/// Extends an unstructured comb-domain fit to all `k_total` subcarriers.
///
/// Each subcarrier-factor column is replaced by the Vandermonde column that
/// best matches it: the generator is the least-squares shift ratio, the
/// delay follows from it, and the amplitude is the least-squares scale.
pub fn extend_to_full_band(f: &FactorSet, comb: &[usize], k_total: usize) -> Result<FactorSet> {
    if comb.len() != f.a3.nrows() || comb.is_empty() {
        return Err(Error::Shape("comb length does not match the subcarrier factor".into()));
    }
    let stride = if comb.len() > 1 { comb[1] - comb[0] } else { 1 };
    let c1 = comb[0] as f64;
    let r = f.rank();
    let n = comb.len();
    let mut d = linalg::zeros(k_total, r);
    for j in 0..r {
        let col = f.a3.col_as_slice(j);
        let g = if n > 1 {
            linalg::shift_ratio(&col[..n - 1], &col[1..]).map_or(Complex64::ONE, linalg::unit)
        } else {
            Complex64::ONE
        };
        let vander: Vec<Complex64> = (0..n).map(|k| g.powu(k as u32)).collect();
        let amp: Complex64 = vander.iter().zip(col).map(|(v, c)| v.conj() * c).sum::<Complex64>() / n as f64;
        let tau = recover_delays(&[g], stride)[0];
        for (k, out) in d.col_as_slice_mut(j).iter_mut().enumerate() {
            *out = amp * Complex64::from_polar(1.0, -2.0 * PI * tau * (k as f64 + 1.0 - c1));
        }
    }
    FactorSet::new(f.a1.clone(), f.a2.clone(), d, f.a4.clone())
}
