//! One-pass Vandermonde-structured decomposition of fourth-order tensors.
//!
//! The first three modes of the input are Vandermonde with unit-modulus
//! generators. Spatial smoothing lifts the tensor into a block-Hankel
//! matrix whose dominant left singular vectors are shift invariant in
//! the first mode; an eigendecomposition of the shift operator yields the
//! first-mode generators together with a basis change `M` that lets the
//! second and third generators be read off column by column. The fourth
//! factor then follows from a linear least-squares solve.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::tensor::{cp_reconstruct, hadamard, khatri_rao_chain, mode_n_unfold, relative_error, ComplexTensor4, FactorSet};

/// Window sizes of the spatial smoothing: `K_i + L_i = I_i + 1` for the
/// three Vandermonde modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub k1: usize,
    pub l1: usize,
    pub k2: usize,
    pub l2: usize,
    pub k3: usize,
    pub l3: usize,
}

impl SmoothingParams {
    /// Builds the parameters from the row windows `(K1, K2, K3)` of a tensor
    /// with the given dims.
    pub fn from_windows(dims: [usize; 4], k: [usize; 3]) -> Result<Self> {
        for i in 0..3 {
            if k[i] == 0 || k[i] > dims[i] {
                return Err(Error::InvalidArgument(format!(
                    "window K{} = {} not in 1..={}",
                    i + 1,
                    k[i],
                    dims[i]
                )));
            }
        }
        let sp = Self {
            k1: k[0],
            l1: dims[0] + 1 - k[0],
            k2: k[1],
            l2: dims[1] + 1 - k[1],
            k3: k[2],
            l3: dims[2] + 1 - k[2],
        };
        sp.check(dims)?;
        Ok(sp)
    }

    /// Validates the windows against tensor dims.
    pub fn check(&self, dims: [usize; 4]) -> Result<()> {
        let ok = self.k1 + self.l1 == dims[0] + 1
            && self.k2 + self.l2 == dims[1] + 1
            && self.k3 + self.l3 == dims[2] + 1
            && [self.k1, self.l1, self.k2, self.l2, self.k3, self.l3].iter().all(|&v| v >= 1);
        if !ok {
            return Err(Error::InvalidArgument(format!("smoothing {self:?} inconsistent with dims {dims:?}")));
        }
        if self.k1 < 2 {
            return Err(Error::InvalidArgument("K1 must be at least 2".into()));
        }
        Ok(())
    }

    pub fn windows(&self) -> [usize; 3] {
        [self.k1, self.k2, self.k3]
    }

    /// `K2·K3`, the row stride of the first-mode shift.
    fn block(&self) -> usize {
        self.k2 * self.k3
    }

    /// `(K1−1)·K2·K3`, the row count of the shifted signal subspace.
    pub fn shift_rows(&self) -> usize {
        (self.k1 - 1) * self.block()
    }

    /// `L1·L2·L3·I4`.
    pub fn hankel_cols(&self, i4: usize) -> usize {
        self.l1 * self.l2 * self.l3 * i4
    }

    /// Rank guaranteed identifiable under this smoothing.
    pub fn capacity(&self, i4: usize) -> usize {
        self.shift_rows().min(self.hankel_cols(i4))
    }
}

/// Largest rank for which the smoothed CPD is generically unique, with
/// the smoothing that attains it.
///
/// Enumerates every admissible window triple. Among maximizers the most
/// balanced `K1/L1` split wins, then `K2/L2`, then `K3/L3`; remaining ties go
/// to the larger windows. Returns `(0, None)` when `I1 < 2`.
pub fn generic_bound(dims: [usize; 4]) -> (usize, Option<SmoothingParams>) {
    if dims.iter().any(|&d| d == 0) || dims[0] < 2 {
        return (0, None);
    }
    let mut best: Option<(usize, SmoothingParams)> = None;
    let key = |sp: &SmoothingParams| {
        let bal = |k: usize, l: usize| k.abs_diff(l);
        (
            std::cmp::Reverse(bal(sp.k1, sp.l1)),
            std::cmp::Reverse(bal(sp.k2, sp.l2)),
            std::cmp::Reverse(bal(sp.k3, sp.l3)),
            sp.k1,
            sp.k2,
            sp.k3,
        )
    };
    for k1 in 2..=dims[0] {
        for k2 in 1..=dims[1] {
            for k3 in 1..=dims[2] {
                let sp = SmoothingParams {
                    k1,
                    l1: dims[0] + 1 - k1,
                    k2,
                    l2: dims[1] + 1 - k2,
                    k3,
                    l3: dims[2] + 1 - k3,
                };
                let cap = sp.capacity(dims[3]);
                let better = match &best {
                    None => true,
                    Some((b, bsp)) => cap > *b || (cap == *b && key(&sp) > key(bsp)),
                };
                if better {
                    best = Some((cap, sp));
                }
            }
        }
    }
    best.map_or((0, None), |(b, sp)| (b, Some(sp)))
}

/// Outcome of the exact uniqueness test.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub unique: bool,
    pub distinct: bool,
    /// Rank of `A1(1:K1−1) ⊙ A2(1:K2) ⊙ A3(1:K3)`.
    pub shift_rank: usize,
    /// Rank of `A1(1:L1) ⊙ A2(1:L2) ⊙ A3(1:L3) ⊙ A4`.
    pub hankel_rank: usize,
    /// Smallest pairwise distance between first-mode generators.
    pub min_separation: f64,
    pub diagnostics: Vec<String>,
}

/// First-mode generators read off a Vandermonde factor (`a[1]/a[0]`), with
/// the largest deviation from the Vandermonde recursion.
fn generators_of(a: &CMat) -> Result<(Vec<Complex64>, f64)> {
    if a.nrows() < 2 {
        return Err(Error::InvalidArgument("first factor needs at least two rows".into()));
    }
    let mut zs = Vec::with_capacity(a.ncols());
    let mut dev = 0.0_f64;
    for r in 0..a.ncols() {
        let col = a.col_as_slice(r);
        if col[0].norm() == 0.0 {
            return Err(Error::InvalidArgument(format!("column {r} of the first factor starts with zero")));
        }
        let z = col[1] / col[0];
        for w in col.windows(2) {
            dev = dev.max((w[1] - z * w[0]).norm() / col[0].norm());
        }
        zs.push(z);
    }
    Ok((zs, dev))
}

/// Exact uniqueness test for a known factor set under smoothing `sp`.
///
/// Ranks use an SVD threshold of `rank_tol·σ_max`; generators count as
/// distinct when every pairwise distance exceeds `distinct_tol`.
pub fn check_exact_uniqueness(
    f: &FactorSet,
    sp: &SmoothingParams,
    rank_tol: f64,
    distinct_tol: f64,
) -> Result<UniquenessReport> {
    let dims = f.dims();
    sp.check(dims)?;
    let r = f.rank();
    let (zs, dev) = generators_of(&f.a1)?;
    let mut diagnostics = Vec::new();
    if dev > 1e-8 {
        diagnostics.push(format!("first factor deviates from Vandermonde by {dev:.3e}"));
    }
    let mut min_sep = f64::INFINITY;
    for i in 0..zs.len() {
        for j in i + 1..zs.len() {
            min_sep = min_sep.min((zs[i] - zs[j]).norm());
        }
    }
    let distinct = min_sep > distinct_tol;
    if !distinct {
        diagnostics.push(format!("distinctness: generators {min_sep:.3e} apart"));
    }
    let top = |a: &CMat, m: usize| linalg::row_block(a, 0, m);
    let shift = khatri_rao_chain(&[&top(&f.a1, sp.k1 - 1), &top(&f.a2, sp.k2), &top(&f.a3, sp.k3)])?;
    let hank = khatri_rao_chain(&[&top(&f.a1, sp.l1), &top(&f.a2, sp.l2), &top(&f.a3, sp.l3), &f.a4])?;
    let shift_rank = linalg::numerical_rank(&shift, rank_tol)?;
    let hankel_rank = linalg::numerical_rank(&hank, rank_tol)?;
    if shift_rank < r {
        diagnostics.push(format!("shifted Khatri-Rao rank {shift_rank} < {r}"));
    }
    if hankel_rank < r {
        diagnostics.push(format!("Hankel-side Khatri-Rao rank {hankel_rank} < {r}"));
    }
    Ok(UniquenessReport {
        unique: distinct && shift_rank == r && hankel_rank == r,
        distinct,
        shift_rank,
        hankel_rank,
        min_separation: min_sep,
        diagnostics,
    })
}

/// Block-Hankel lifting of `x` into a `K1K2K3 × L1L2L3I4` matrix.
///
/// Row `k3 + k2·K3 + k1·K2K3`, column `i4 + l3·I4 + l2·L3I4 + l1·L2L3I4`
/// (all 0-based) holds `x[k1+l1, k2+l2, k3+l3, i4]`.
pub fn hankelize(x: &ComplexTensor4, sp: &SmoothingParams) -> Result<CMat> {
    let dims = x.dims();
    sp.check(dims)?;
    let i4 = dims[3];
    let rows = sp.k1 * sp.k2 * sp.k3;
    let cols = sp.hankel_cols(i4);
    let mut out = linalg::zeros(rows, cols);
    for l1 in 0..sp.l1 {
        for l2 in 0..sp.l2 {
            for l3 in 0..sp.l3 {
                for p in 0..i4 {
                    let col = p + l3 * i4 + l2 * sp.l3 * i4 + l1 * sp.l2 * sp.l3 * i4;
                    let dst = out.col_as_slice_mut(col);
                    for k1 in 0..sp.k1 {
                        for k2 in 0..sp.k2 {
                            let row0 = k2 * sp.k3 + k1 * sp.block();
                            for k3 in 0..sp.k3 {
                                dst[row0 + k3] = x.get(k1 + l1, k2 + l2, k3 + l3, p);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// How the signal-subspace dimension is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "RankRuleRepr", into = "RankRuleRepr")]
pub enum RankRule {
    /// Count singular values above `eps_rel·σ_1`.
    #[default]
    RelativeThreshold,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RankRuleRepr {
    Name(String),
    Fixed(usize),
}

impl TryFrom<RankRuleRepr> for RankRule {
    type Error = String;

    fn try_from(r: RankRuleRepr) -> std::result::Result<Self, String> {
        match r {
            RankRuleRepr::Fixed(n) => Ok(RankRule::Fixed(n)),
            RankRuleRepr::Name(s) if s == "relative-threshold" => Ok(RankRule::RelativeThreshold),
            RankRuleRepr::Name(s) => Err(format!("unknown rank rule {s:?}")),
        }
    }
}

impl From<RankRule> for RankRuleRepr {
    fn from(r: RankRule) -> Self {
        match r {
            RankRule::RelativeThreshold => RankRuleRepr::Name("relative-threshold".into()),
            RankRule::Fixed(n) => RankRuleRepr::Fixed(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SignalSubspace {
    /// Leading `rank` left singular vectors.
    pub u: CMat,
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

/// Thin SVD of the lifted matrix and rank selection. The rank is clipped to
/// the smaller matrix dimension and to `cap`.
pub fn signal_subspace(xh: &CMat, rule: RankRule, eps_rel: f64, cap: usize) -> Result<SignalSubspace> {
    let (u, s, _) = linalg::thin_svd(xh)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let wanted = match rule {
        RankRule::RelativeThreshold => s.iter().filter(|&&x| x > eps_rel * smax).count(),
        RankRule::Fixed(n) => n,
    };
    let rank = wanted.min(s.len()).min(cap);
    Ok(SignalSubspace { u: linalg::col_block(&u, 0, rank), singular_values: s, rank })
}

/// Generators recovered from the shift-invariance step.
#[derive(Debug, Clone)]
pub struct GeneratorEstimate {
    pub z1: Vec<Complex64>,
    pub z2: Vec<Complex64>,
    pub z3: Vec<Complex64>,
    /// Eigenvectors of the shift operator, one column per path.
    pub m: CMat,
    pub rank: usize,
    /// Condition number of `m`.
    pub eigvec_cond: f64,
}

/// Eigendecomposition of `pinv(U1)·U2` where `U1`/`U2` drop the last/first
/// `K2K3` rows of the signal subspace. Eigenvalues are projected to the unit
/// circle and sorted by ascending phase; `z2`/`z3` are left empty.
pub fn shift_evd_z1(u: &CMat, sp: &SmoothingParams, max_cond: f64) -> Result<GeneratorEstimate> {
    let r = u.ncols();
    let rows = sp.k1 * sp.block();
    if u.nrows() != rows {
        return Err(Error::Shape(format!("signal subspace has {} rows, smoothing needs {rows}", u.nrows())));
    }
    if r == 0 {
        return Err(Error::InvalidArgument("empty signal subspace".into()));
    }
    let u1 = linalg::row_block(u, 0, sp.shift_rows());
    let u2 = linalg::row_block(u, sp.block(), sp.shift_rows());
    let phi = &linalg::pinv(&u1, linalg::PINV_RCOND)? * &u2;
    let evd = phi
        .eigen()
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals: Vec<Complex64> = evd.S().column_vector().iter().copied().collect();
    let vecs = evd.U();
    let mut order: Vec<usize> = (0..r).collect();
    let phase = |z: Complex64| linalg::unit(z).arg();
    order.sort_by(|&a, &b| phase(vals[a]).total_cmp(&phase(vals[b])));
    let m = CMat::from_fn(r, r, |i, j| vecs[(i, order[j])]);
    let z1 = order.iter().map(|&j| linalg::unit(vals[j])).collect();
    let eigvec_cond = linalg::condition_number(&m)?;
    if !(eigvec_cond <= max_cond) {
        return Err(Error::Numerical(format!(
            "shift operator eigenvectors ill-conditioned (cond {eigvec_cond:.3e})"
        )));
    }
    Ok(GeneratorEstimate { z1, z2: Vec::new(), z3: Vec::new(), m, rank: r, eigvec_cond })
}

/// `(a1(1:K1)ᴴ ⊗ I_{K2K3})·w` for one column `w = U·m_r`.
fn contract_first(w: &[Complex64], a1: &[Complex64], sp: &SmoothingParams) -> Vec<Complex64> {
    let b = sp.block();
    let mut v = vec![Complex64::ZERO; b];
    for (k1, a) in a1.iter().take(sp.k1).enumerate() {
        let ac = a.conj();
        for (vi, wi) in v.iter_mut().zip(&w[k1 * b..(k1 + 1) * b]) {
            *vi += ac * wi;
        }
    }
    v
}

fn check_column(m: &CMat, a: &CMat, r: usize) -> Result<()> {
    if r >= m.ncols() || r >= a.ncols() {
        return Err(Error::InvalidArgument(format!("path index {r} out of range")));
    }
    Ok(())
}

/// Column `r` of `A2(1:K2) ⊙ A3(1:K3)` up to scale, via
/// `(a1(1:K1)ᴴ ⊗ I_{K2K3})·U·m_r`.
pub fn recover_kr23(u: &CMat, m: &CMat, a1: &CMat, sp: &SmoothingParams, r: usize) -> Result<Vec<Complex64>> {
    check_column(m, a1, r)?;
    if a1.nrows() < sp.k1 {
        return Err(Error::Shape("first factor shorter than K1".into()));
    }
    let w = u * m.col(r);
    let w: Vec<Complex64> = w.iter().copied().collect();
    Ok(contract_first(&w, a1.col_as_slice(r), sp))
}

/// Second-mode generator from a `K2·K3` vector: least-squares ratio between
/// rows `K3..K2K3` and rows `0..(K2−1)K3`, projected to the unit circle.
pub fn extract_z2(v: &[Complex64], sp: &SmoothingParams) -> Result<Complex64> {
    if sp.k2 < 2 {
        return Err(Error::InvalidArgument("K2 must be at least 2 to observe the second mode".into()));
    }
    if v.len() != sp.block() {
        return Err(Error::Shape(format!("vector has {} entries, expected {}", v.len(), sp.block())));
    }
    let n = (sp.k2 - 1) * sp.k3;
    linalg::shift_ratio(&v[..n], &v[sp.k3..sp.k3 + n])
        .map(linalg::unit)
        .ok_or_else(|| Error::Numerical("second-mode shift block is numerically zero".into()))
}

/// Third-mode column and generator for path `r`.
///
/// Returns `(a3, z3, observable)`; with `K3 < 2` the generator cannot be
/// observed and `z3 = 1` with `observable = false`.
pub fn recover_a3_z3(
    u: &CMat,
    m: &CMat,
    a1: &CMat,
    a2: &CMat,
    sp: &SmoothingParams,
    r: usize,
) -> Result<(Vec<Complex64>, Complex64, bool)> {
    let v = recover_kr23(u, m, a1, sp, r)?;
    check_column(m, a2, r)?;
    if a2.nrows() < sp.k2 {
        return Err(Error::Shape("second factor shorter than K2".into()));
    }
    Ok(a3_from_kr23(&v, a2.col_as_slice(r), sp))
}

fn a3_from_kr23(v: &[Complex64], a2: &[Complex64], sp: &SmoothingParams) -> (Vec<Complex64>, Complex64, bool) {
    let mut a3 = vec![Complex64::ZERO; sp.k3];
    for (k2, a) in a2.iter().take(sp.k2).enumerate() {
        let ac = a.conj();
        for (x, y) in a3.iter_mut().zip(&v[k2 * sp.k3..(k2 + 1) * sp.k3]) {
            *x += ac * y;
        }
    }
    if sp.k3 < 2 {
        return (a3, Complex64::ONE, false);
    }
    match linalg::shift_ratio(&a3[..sp.k3 - 1], &a3[1..]) {
        Some(z) => (a3, linalg::unit(z), true),
        None => (a3, Complex64::ONE, false),
    }
}

/// Least-squares fourth factor given the other three:
/// `A4 = X_(4)·conj(A3 ⊙ A2 ⊙ A1)·pinv(conj(A3ᴴA3 ∗ A2ᴴA2 ∗ A1ᴴA1))`.
///
/// Returns the factor and whether the Gram product was rank deficient.
pub fn solve_fourth_factor(x: &ComplexTensor4, a1: &CMat, a2: &CMat, a3: &CMat, rcond: f64) -> Result<(CMat, bool)> {
    let dims = x.dims();
    if a1.nrows() != dims[0] || a2.nrows() != dims[1] || a3.nrows() != dims[2] {
        return Err(Error::Shape("factor rows do not match tensor dims".into()));
    }
    let kr = khatri_rao_chain(&[a3, a2, a1])?;
    let x4 = mode_n_unfold(x, 4)?;
    let rhs = &x4 * kr.conjugate();
    let gram = |a: &CMat| a.adjoint() * a;
    let g = hadamard(&hadamard(&gram(a3), &gram(a2))?, &gram(a1))?;
    // X_(4) ≈ A4·KRᵀ gives normal equations A4·(KRᵀ·conj(KR)) = X_(4)·conj(KR),
    // and KRᵀ·conj(KR) is the conjugate of the Gram product.
    let (ginv, cut) = linalg::pinv_hermitian(&linalg::conj(&g), rcond)?;
    Ok((&rhs * &ginv, cut))
}

/// Normalized delays from comb-domain generators `g = exp(−j2πτs)`:
/// `τ = frac(−arg(g)/2π)/s`, so `τ ∈ [0, 1/s)`.
pub fn recover_delays(g: &[Complex64], stride: usize) -> Vec<f64> {
    let s = stride.max(1) as f64;
    g.iter()
        .map(|z| {
            let t = (-z.arg() / (2.0 * PI)).rem_euclid(1.0);
            // rem_euclid can round up to exactly 1.0 for tiny negative inputs
            (if t >= 1.0 { 0.0 } else { t }) / s
        })
        .collect()
}

/// Tuning knobs for [`estimate_channel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VsdOptions {
    pub rank_rule: RankRule,
    /// Relative singular-value threshold of the default rank rule.
    pub eps_rel: f64,
    /// Row windows `(K1, K2, K3)`; `None` maximizes the generic bound.
    pub smoothing: Option<[usize; 3]>,
    /// Optional extra cap on the detected rank.
    pub max_rank: Option<usize>,
    pub pinv_rcond: f64,
    /// Largest accepted condition number of the shift eigenvectors.
    pub max_eigvec_cond: f64,
}

impl Default for VsdOptions {
    fn default() -> Self {
        Self {
            rank_rule: RankRule::RelativeThreshold,
            eps_rel: 1e-2,
            smoothing: None,
            max_rank: None,
            pinv_rcond: linalg::PINV_RCOND,
            max_eigvec_cond: 1e12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub rank: usize,
    pub smoothing: Option<SmoothingParams>,
    pub singular_values: Vec<f64>,
    /// Normalized delays, one per path.
    pub delays: Vec<f64>,
    /// Phases of the three generator sets, one entry per path.
    pub z1_phase: Vec<f64>,
    pub z2_phase: Vec<f64>,
    pub z3_phase: Vec<f64>,
    /// Relative residual of the fitted model on the comb tensor.
    pub residual: f64,
    /// Fitted comb-domain factors (absent at rank 0).
    pub comb_factors: Option<FactorSet>,
    pub warnings: Vec<String>,
}

fn comb_stride(comb: &[usize], k_total: usize) -> Result<usize> {
    if comb.is_empty() || comb[0] == 0 || comb[comb.len() - 1] > k_total {
        return Err(Error::InvalidArgument("comb must be non-empty within 1..=K".into()));
    }
    if comb.len() == 1 {
        return Ok(1);
    }
    let s = comb[1].checked_sub(comb[0]).filter(|&s| s > 0);
    match s {
        Some(s) if comb.windows(2).all(|w| w[1] == w[0] + s) => Ok(s),
        _ => Err(Error::InvalidArgument("comb is not an increasing arithmetic progression".into())),
    }
}

fn phases(z: &[Complex64]) -> Vec<f64> {
    z.iter().map(|z| z.arg()).collect()
}

/// Full pipeline: comb-domain tensor in, full-band channel and report out.
pub fn estimate_channel(
    h_comb: &ComplexTensor4,
    comb: &[usize],
    k_total: usize,
    opts: &VsdOptions,
) -> Result<(ComplexTensor4, EstimationReport)> {
    let dims = h_comb.dims();
    if comb.len() != dims[2] {
        return Err(Error::Shape(format!("comb has {} entries, tensor has {}", comb.len(), dims[2])));
    }
    let stride = comb_stride(comb, k_total)?;
    let full_dims = [dims[0], dims[1], k_total, dims[3]];
    let (bound, best) = generic_bound(dims);
    let sp = match opts.smoothing {
        Some(k) => SmoothingParams::from_windows(dims, k)?,
        None => best.ok_or_else(|| Error::InvalidArgument("first mode needs at least two entries".into()))?,
    };
    let cap = sp.capacity(dims[3]).min(bound).min(opts.max_rank.unwrap_or(usize::MAX));

    let empty_report = |singular_values: Vec<f64>, warnings: Vec<String>| EstimationReport {
        rank: 0,
        smoothing: Some(sp),
        singular_values,
        delays: Vec::new(),
        z1_phase: Vec::new(),
        z2_phase: Vec::new(),
        z3_phase: Vec::new(),
        residual: 0.0,
        comb_factors: None,
        warnings,
    };
    if h_comb.frobenius_sqr() == 0.0 {
        return Ok((
            ComplexTensor4::zeros(full_dims)?,
            empty_report(Vec::new(), vec!["comb tensor is zero".into()]),
        ));
    }

    let mut warnings = Vec::new();
    let xh = hankelize(h_comb, &sp)?;
    let sub = signal_subspace(&xh, opts.rank_rule, opts.eps_rel, cap)?;
    if let RankRule::Fixed(n) = opts.rank_rule {
        if n > sub.rank {
            warnings.push(format!("requested rank {n} clipped to {}", sub.rank));
        }
    }
    if sub.rank == 0 {
        return Ok((ComplexTensor4::zeros(full_dims)?, empty_report(sub.singular_values, warnings)));
    }
    let r = sub.rank;
    let mut gen = shift_evd_z1(&sub.u, &sp, opts.max_eigvec_cond)?;
    let a1 = linalg::vandermonde(&gen.z1, dims[0]);

    // all contractions share W = U·M
    let w = &sub.u * &gen.m;
    let mut z2 = Vec::with_capacity(r);
    let mut z3 = Vec::with_capacity(r);
    let mut blind2 = false;
    let mut blind3 = false;
    for j in 0..r {
        let v = contract_first(w.col_as_slice(j), a1.col_as_slice(j), &sp);
        let g2 = if sp.k2 >= 2 {
            extract_z2(&v, &sp).unwrap_or_else(|_| {
                blind2 = true;
                Complex64::ONE
            })
        } else {
            blind2 = true;
            Complex64::ONE
        };
        let a2col: Vec<Complex64> = (0..sp.k2).map(|k| g2.powu(k as u32)).collect();
        let (_, g3, seen) = a3_from_kr23(&v, &a2col, &sp);
        blind3 |= !seen;
        z2.push(g2);
        z3.push(g3);
    }
    if blind2 && dims[1] > 1 {
        warnings.push("second-mode generators unobservable for some paths; set to 1".into());
    }
    if blind3 && dims[2] > 1 {
        warnings.push("third-mode generators unobservable for some paths; set to 1".into());
    }
    let a2 = linalg::vandermonde(&z2, dims[1]);
    let a3 = linalg::vandermonde(&z3, dims[2]);
    let (p, cut) = solve_fourth_factor(h_comb, &a1, &a2, &a3, opts.pinv_rcond)?;
    if cut {
        warnings.push("Gram product of the first three factors is rank deficient".into());
    }
    let comb_factors = FactorSet::new(a1.clone(), a2.clone(), a3, p.clone())?;
    let residual = relative_error(h_comb, &cp_reconstruct(&comb_factors, dims)?)?;

    // D over the full band, with the comb offset moved into the gains
    let delays = recover_delays(&z3, stride);
    let c1 = comb[0] as f64;
    let all: Vec<usize> = (1..=k_total).collect();
    let d = crate::channel::delay_factor(&delays, &all, k_total)?;
    let p_full = CMat::from_fn(p.nrows(), r, |i, j| {
        p[(i, j)] * Complex64::from_polar(1.0, 2.0 * PI * delays[j] * (c1 - 1.0))
    });
    let full = cp_reconstruct(&FactorSet::new(a1, a2, d, p_full)?, full_dims)?;

    gen.z2 = z2;
    gen.z3 = z3;
    Ok((
        full,
        EstimationReport {
            rank: r,
            smoothing: Some(sp),
            singular_values: sub.singular_values,
            delays,
            z1_phase: phases(&gen.z1),
            z2_phase: phases(&gen.z2),
            z3_phase: phases(&gen.z3),
            residual,
            comb_factors: Some(comb_factors),
            warnings,
        },
    ))
}
