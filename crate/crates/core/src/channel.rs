//! Multi-sub-path uplink channel synthesis.
//!
//! A user's channel is a sum of sub-paths, each contributing a rank-1 term
//! to a `(n_col, n_row, K, n_pol)` tensor. The three array/frequency factors
//! are Vandermonde with unit-modulus generators; the polarization factor
//! holds the complex path gains.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::tensor::{cp_reconstruct, ComplexTensor4, FactorSet};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Base-station array and OFDM numerology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayConfig {
    pub n_col: usize,
    pub n_row: usize,
    pub n_pol: usize,
    /// Column spacing in meters.
    pub d_col: f64,
    /// Row spacing in meters.
    pub d_row: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    /// Wave speed in m/s.
    pub c: f64,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Total subcarriers `K`.
    pub subcarriers: usize,
}

impl Default for ArrayConfig {
    /// 4x16 cross-polarized UPA at 4.9 GHz, 30 kHz spacing, 384 subcarriers.
    fn default() -> Self {
        Self {
            n_col: 16,
            n_row: 4,
            n_pol: 2,
            d_col: 0.03,
            d_row: 0.09,
            f_c: 4.9e9,
            c: SPEED_OF_LIGHT,
            delta_f: 30e3,
            subcarriers: 384,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_col == 0 || self.n_row == 0 || self.n_pol == 0 || self.subcarriers == 0 {
            return Err(Error::InvalidArgument("array counts must be >= 1".into()));
        }
        let positive = [self.d_col, self.d_row, self.f_c, self.c, self.delta_f];
        if positive.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidArgument("spacings and frequencies must be positive".into()));
        }
        Ok(())
    }

    /// Full-band channel tensor dims `(n_col, n_row, K, n_pol)`.
    pub fn channel_dims(&self) -> [usize; 4] {
        [self.n_col, self.n_row, self.subcarriers, self.n_pol]
    }

    /// Phase advance per column for `sin(aoa) = 1`.
    fn col_phase_scale(&self) -> f64 {
        2.0 * PI * self.f_c * self.d_col / self.c
    }

    fn row_phase_scale(&self) -> f64 {
        2.0 * PI * self.f_c * self.d_row / self.c
    }

    /// Column-steering generator `exp(j 2π f_c d_col sin(aoa) / c)`.
    pub fn col_generator(&self, aoa_deg: f64) -> Complex64 {
        Complex64::from_polar(1.0, self.col_phase_scale() * aoa_deg.to_radians().sin())
    }

    /// Row-steering generator `exp(j 2π f_c d_row cos(zoa) / c)`.
    pub fn row_generator(&self, zoa_deg: f64) -> Complex64 {
        Complex64::from_polar(1.0, self.row_phase_scale() * zoa_deg.to_radians().cos())
    }
}

/// One propagation sub-path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPath {
    /// Per-polarization complex gains.
    pub gains: Vec<Complex64>,
    /// Delay normalized to the subcarrier spacing (`τ·Δf`), in `[0, 1)`.
    pub delay: f64,
    pub aoa_deg: f64,
    pub zoa_deg: f64,
}

impl SubPath {
    pub fn power(&self) -> f64 {
        self.gains.iter().map(|g| g.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChannel {
    pub owner: usize,
    pub paths: Vec<SubPath>,
}

impl UserChannel {
    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(SubPath::power).sum()
    }

    pub fn delays(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.delay).collect()
    }

    pub fn aoas_deg(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.aoa_deg).collect()
    }

    pub fn zoas_deg(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.zoa_deg).collect()
    }
}

/// Converts a physical delay in seconds to the per-subcarrier normalized delay.
pub fn delay_from_seconds(seconds: f64, delta_f: f64) -> f64 {
    seconds * delta_f
}

pub fn delay_to_seconds(normalized: f64, delta_f: f64) -> f64 {
    normalized / delta_f
}

/// `n_col x L` column-steering factor.
pub fn steering_col(aoa_deg: &[f64], cfg: &ArrayConfig) -> CMat {
    let z: Vec<_> = aoa_deg.iter().map(|&a| cfg.col_generator(a)).collect();
    linalg::vandermonde(&z, cfg.n_col)
}

/// `n_row x L` row-steering factor.
pub fn steering_row(zoa_deg: &[f64], cfg: &ArrayConfig) -> CMat {
    let z: Vec<_> = zoa_deg.iter().map(|&a| cfg.row_generator(a)).collect();
    linalg::vandermonde(&z, cfg.n_row)
}

/// Delay factor sampled at 1-based subcarrier `indices`:
/// entry `(k', l) = exp(-j 2π τ_l (indices[k'] - 1))`.
pub fn delay_factor(delays: &[f64], indices: &[usize], k_total: usize) -> Result<CMat> {
    if let Some(&bad) = indices.iter().find(|&&k| k == 0 || k > k_total) {
        return Err(Error::InvalidArgument(format!("subcarrier index {bad} outside 1..={k_total}")));
    }
    if indices.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("subcarrier indices must be strictly increasing".into()));
    }
    let mut out = linalg::zeros(indices.len(), delays.len());
    for (l, &tau) in delays.iter().enumerate() {
        let col = out.col_as_slice_mut(l);
        for (v, &k) in col.iter_mut().zip(indices) {
            *v = Complex64::from_polar(1.0, -2.0 * PI * tau * (k - 1) as f64);
        }
    }
    Ok(out)
}

/// `n_pol x L` gain factor.
pub fn gain_factor(paths: &[SubPath]) -> Result<CMat> {
    let n_pol = paths.first().map_or(0, |p| p.gains.len());
    if paths.iter().any(|p| p.gains.len() != n_pol) || n_pol == 0 {
        return Err(Error::Shape("paths carry inconsistent polarization counts".into()));
    }
    let mut out = linalg::zeros(n_pol, paths.len());
    for (l, p) in paths.iter().enumerate() {
        out.col_as_slice_mut(l).copy_from_slice(&p.gains);
    }
    Ok(out)
}

/// The four CP factors of a user's full-band channel.
pub fn channel_factors(chan: &UserChannel, cfg: &ArrayConfig) -> Result<FactorSet> {
    if chan.paths.is_empty() {
        return Err(Error::InvalidArgument("channel has no paths".into()));
    }
    let p = gain_factor(&chan.paths)?;
    if p.nrows() != cfg.n_pol {
        return Err(Error::Shape(format!(
            "paths have {} polarizations, array has {}",
            p.nrows(),
            cfg.n_pol
        )));
    }
    let all: Vec<usize> = (1..=cfg.subcarriers).collect();
    FactorSet::new(
        steering_col(&chan.aoas_deg(), cfg),
        steering_row(&chan.zoas_deg(), cfg),
        delay_factor(&chan.delays(), &all, cfg.subcarriers)?,
        p,
    )
}

/// Full-band channel tensor of dims `(n_col, n_row, K, n_pol)`.
pub fn synthesize_channel(chan: &UserChannel, cfg: &ArrayConfig) -> Result<ComplexTensor4> {
    cfg.validate()?;
    let f = channel_factors(chan, cfg)?;
    cp_reconstruct(&f, cfg.channel_dims())
}

/// One cluster of a [`PathProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub power_db: f64,
    /// Delay in units of the profile's `delay_spread`.
    pub delay: f64,
    pub aoa_deg: f64,
    pub zoa_deg: f64,
}

/// Clustered delay-line description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathProfile {
    #[serde(default)]
    pub name: String,
    pub clusters: Vec<ClusterSpec>,
    pub rays_per_cluster: usize,
    /// Scale applied to the intra-cluster azimuth ray offsets, degrees.
    pub angle_spread_deg: f64,
    /// Zenith counterpart; falls back to `angle_spread_deg`.
    #[serde(default)]
    pub zenith_spread_deg: Option<f64>,
    /// Delay spread in seconds.
    pub delay_spread: f64,
}

const DEFAULT_PROFILE: &str = include_str!("../assets/cdl-like-default.json");

/// Unit-spread ray offsets of a 20-ray cluster.
const RAY_OFFSETS: [f64; 20] = [
    0.0447, -0.0447, 0.1413, -0.1413, 0.2492, -0.2492, 0.3715, -0.3715, 0.5129, -0.5129, 0.6797,
    -0.6797, 0.8844, -0.8844, 1.1481, -1.1481, 1.5195, -1.5195, 2.1551, -2.1551,
];

impl PathProfile {
    /// The bundled `cdl-like-default` profile.
    pub fn cdl_like_default() -> Self {
        serde_json::from_str(DEFAULT_PROFILE).expect("bundled profile parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() || self.rays_per_cluster == 0 {
            return Err(Error::InvalidArgument("profile needs clusters and rays".into()));
        }
        if !(self.delay_spread >= 0.0 && self.angle_spread_deg >= 0.0) {
            return Err(Error::InvalidArgument("spreads must be non-negative".into()));
        }
        Ok(())
    }
}

fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 { 180.0 } else { w }
}

fn clip_delay(tau: f64, limit: f64) -> f64 {
    let hi = limit.min(1.0) * (1.0 - 1e-9);
    tau.clamp(0.0, hi)
}

/// Draws `n_paths` sub-paths from a clustered profile.
///
/// The strongest `ceil(n_paths / rays_per_cluster)` clusters are used and rays
/// are spread evenly over them. Rays of a cluster share its delay; azimuths
/// follow the fixed offset table and zenith offsets are randomly coupled.
/// Normalized delays are clipped into `[0, delay_limit)`. Total gain power is 1.
pub fn generate_paths(
    profile: &PathProfile,
    n_paths: usize,
    cfg: &ArrayConfig,
    delay_limit: f64,
    seed: u64,
    owner: usize,
) -> Result<UserChannel> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut order: Vec<usize> = (0..profile.clusters.len()).collect();
    order.sort_by(|&a, &b| profile.clusters[b].power_db.total_cmp(&profile.clusters[a].power_db));
    let n_clusters = order.len().min(n_paths.div_ceil(profile.rays_per_cluster));
    let base = n_paths / n_clusters;
    let extra = n_paths % n_clusters;
    let zen_spread = profile.zenith_spread_deg.unwrap_or(profile.angle_spread_deg);

    let mut paths = Vec::with_capacity(n_paths);
    for (ci, &idx) in order.iter().take(n_clusters).enumerate() {
        let cl = &profile.clusters[idx];
        let rays = base + usize::from(ci < extra);
        let ray_power = 10f64.powf(cl.power_db / 10.0) / rays as f64;
        let tau = clip_delay(
            delay_from_seconds(cl.delay * profile.delay_spread, cfg.delta_f),
            delay_limit,
        );
        let mut coupling: Vec<usize> = (0..RAY_OFFSETS.len()).collect();
        coupling.shuffle(&mut rng);
        for m in 0..rays {
            let (az_off, zen_off) = if m < RAY_OFFSETS.len() {
                (RAY_OFFSETS[m], RAY_OFFSETS[coupling[m]])
            } else {
                (rng.random_range(-2.2..2.2), rng.random_range(-2.2..2.2))
            };
            let gains = (0..cfg.n_pol)
                .map(|_| {
                    Complex64::from_polar(
                        (ray_power / cfg.n_pol as f64).sqrt(),
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            paths.push(SubPath {
                gains,
                delay: tau,
                aoa_deg: wrap_deg(cl.aoa_deg + profile.angle_spread_deg * az_off),
                zoa_deg: (cl.zoa_deg + zen_spread * zen_off).clamp(0.0, 180.0),
            });
        }
    }
    normalize_power(&mut paths);
    Ok(UserChannel { owner, paths })
}

fn normalize_power(paths: &mut [SubPath]) {
    let total: f64 = paths.iter().map(SubPath::power).sum();
    if total > 0.0 {
        let s = total.sqrt().recip();
        for p in paths.iter_mut() {
            for g in &mut p.gains {
                *g *= s;
            }
        }
    }
}

/// Draws `n_paths` sub-paths whose column-steering generators sit on a
/// jittered uniform grid of phases, so they are pairwise separated by at
/// least a fifth of the grid step. Zenith angles, delays (in
/// `[0, delay_limit)`) and gain phases are uniform; total power is 1.
pub fn generate_separated_paths(
    n_paths: usize,
    cfg: &ArrayConfig,
    delay_limit: f64,
    seed: u64,
    owner: usize,
) -> Result<UserChannel> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keep every column phase strictly inside (-π, π) so generators never alias
    let scale = cfg.col_phase_scale();
    let span = scale.min(PI) * 0.995;
    let step = 2.0 * span / n_paths as f64;
    let limit = delay_limit.min(1.0);
    let mut paths = Vec::with_capacity(n_paths);
    for l in 0..n_paths {
        let phase = -span + step * (l as f64 + 0.5 + rng.random_range(-0.4..0.4));
        let aoa_deg = (phase / scale).clamp(-1.0, 1.0).asin().to_degrees();
        let zoa_deg = rng.random_range(-1.0f64..1.0).acos().to_degrees();
        let delay = clip_delay(rng.random_range(0.0..limit), limit);
        let gains = (0..cfg.n_pol)
            .map(|_| Complex64::from_polar(rng.random_range(0.5..1.0), rng.random_range(0.0..2.0 * PI)))
            .collect();
        paths.push(SubPath { gains, delay, aoa_deg, zoa_deg });
    }
    normalize_power(&mut paths);
    Ok(UserChannel { owner, paths })
}

/// Perturbation applied to a target-cell channel to obtain an adjacent-cell
/// interference channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbOptions {
    /// Gain phases are rotated by a uniform draw on `±π·phase_scale`.
    pub phase_scale: f64,
    /// Angle jitter half-width per unit `phase_scale`, degrees.
    pub angle_jitter_deg: f64,
    /// Normalized-delay jitter half-width per unit `phase_scale`.
    pub delay_jitter: f64,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self { phase_scale: 1.0, angle_jitter_deg: 2.0, delay_jitter: 1e-3 }
    }
}

pub fn perturb_for_interference(chan: &UserChannel, seed: u64, opts: &PerturbOptions) -> UserChannel {
    let s = opts.phase_scale;
    if s == 0.0 {
        return chan.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sym = |w: f64| if w > 0.0 { rng.random_range(-w..w) } else { 0.0 };
    let paths = chan
        .paths
        .iter()
        .map(|p| {
            let rot = Complex64::from_polar(1.0, sym(PI * s.abs()));
            let d_aoa = sym(opts.angle_jitter_deg * s.abs());
            let d_zoa = sym(opts.angle_jitter_deg * s.abs());
            let d_tau = sym(opts.delay_jitter * s.abs());
            SubPath {
                gains: p.gains.iter().map(|g| g * rot).collect(),
                delay: (p.delay + d_tau).clamp(0.0, 1.0 - 1e-12),
                aoa_deg: wrap_deg(p.aoa_deg + d_aoa),
                zoa_deg: (p.zoa_deg + d_zoa).clamp(0.0, 180.0),
            }
        })
        .collect();
    UserChannel { owner: chan.owner, paths }
}
