//! Experiment harness: generator recovery, NMSE-versus-SNR sweeps,
//! parameter counting, and CSV/SVG/manifest output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airlink::{self, derive_seed, LinkBudget, PilotGrid};
use crate::als::{self, AlsInit, AlsOptions};
use crate::channel::{self, ArrayConfig, PathProfile, PerturbOptions};
use crate::error::{Error, Result};
use crate::plot::{self, PlotKind, PlotSpec, Series};
use crate::tensor::{cp_reconstruct, relative_error, ComplexTensor4};
use crate::vsd_fort::{self, RankRule, VsdOptions};

const DEFAULT_CONFIG: &str = include_str!("../assets/table1.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Als,
    VsdFort,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::Als, Method::VsdFort];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Als => "als",
            Method::VsdFort => "vsd_fort",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// CP-ALS settings used inside the sweep; the rank follows the structured
/// estimate's detected rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsSettings {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub init: AlsInit,
}

impl Default for AlsSettings {
    fn default() -> Self {
        Self { max_iters: 30, rel_tol: 1e-6, init: AlsInit::SvdBased }
    }
}

/// Settings of the generator-recovery experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverySettings {
    /// Requested path count; clipped to the generic bound.
    pub paths: usize,
    pub vsd: VsdOptions,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        Self { paths: 420, vsd: VsdOptions { eps_rel: 1e-8, ..VsdOptions::default() } }
    }
}

/// A full simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub array: ArrayConfig,
    /// Comb stride; each comb has `K / stride` subcarriers.
    pub comb_stride: usize,
    pub pilot_symbols: usize,
    pub users: usize,
    /// Sub-paths per channel.
    pub paths: usize,
    pub snr_db: Vec<f64>,
    pub isr_db: f64,
    /// Number of adjacent-cell interference channels; `None` uses one per user.
    pub interference_channels: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub out_dir: PathBuf,
    /// Clustered path profile; `None` uses the bundled one.
    pub profile: Option<PathBuf>,
    pub perturb: PerturbOptions,
    pub vsd: VsdOptions,
    pub als: AlsSettings,
    pub recovery: RecoverySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            array: ArrayConfig::default(),
            comb_stride: 12,
            pilot_symbols: 2,
            users: 24,
            paths: 360,
            snr_db: vec![0.0, 10.0, 20.0, 30.0],
            isr_db: 0.0,
            interference_channels: None,
            trials: 100,
            seed: 20240601,
            methods: Method::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
            profile: None,
            perturb: PerturbOptions::default(),
            vsd: VsdOptions::default(),
            als: AlsSettings::default(),
            recovery: RecoverySettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// The bundled benchmark scenario (`assets/table1.json`).
    pub fn table1() -> Self {
        serde_json::from_str(DEFAULT_CONFIG).expect("bundled config parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        if self.trials == 0 || self.snr_db.is_empty() || self.paths == 0 || self.users == 0 {
            return Err(Error::InvalidArgument("trials, snr grid, paths and users must be non-empty".into()));
        }
        if self.comb_stride == 0 || self.comb_stride > self.array.subcarriers {
            return Err(Error::InvalidArgument("comb stride must be in 1..=K".into()));
        }
        if self.pilot_symbols == 0 {
            return Err(Error::InvalidArgument("need at least one pilot symbol".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<PathProfile> {
        match &self.profile {
            Some(p) => PathProfile::load(p),
            None => Ok(PathProfile::cdl_like_default()),
        }
    }

    /// Largest normalized delay a comb of this stride resolves unambiguously.
    pub fn delay_limit(&self) -> f64 {
        1.0 / self.comb_stride as f64
    }

    fn n_interference(&self) -> usize {
        self.interference_channels.unwrap_or(self.users)
    }
}

/// `‖H − Ĥ‖²_F / ‖H‖²_F`.
pub fn nmse(truth: &ComplexTensor4, est: &ComplexTensor4) -> Result<f64> {
    relative_error(truth, est)
}

/// Runs `f` with linear algebra forced sequential and trials spread over
/// `threads` workers (`None` keeps the global pool).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    faer::set_global_parallelism(faer::Par::Seq);
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.9e}")
}

// ---------------------------------------------------------------- recovery

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub dims: [usize; 4],
    pub bound: usize,
    pub paths: usize,
    pub detected_rank: usize,
    pub true_phase: Vec<f64>,
    pub est_phase: Vec<f64>,
    pub max_phase_error: f64,
    pub residual: f64,
    pub full_band_nmse: f64,
    pub warnings: Vec<String>,
}

impl RecoveryResult {
    pub fn csv(&self) -> String {
        let mut s = String::from("true_phase,est_phase,abs_error\n");
        for (t, e) in self.true_phase.iter().zip(&self.est_phase) {
            let _ = writeln!(s, "{},{},{}", fmt_f(*t), fmt_f(*e), fmt_f(wrap_phase(e - t).abs()));
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "generator recovery: dims {:?}, bound {}, paths {}, detected rank {}, max phase error {:.3e} rad, comb residual {:.3e}, full-band nmse {:.3e}",
            self.dims, self.bound, self.paths, self.detected_rank, self.max_phase_error, self.residual, self.full_band_nmse
        )
    }
}

fn wrap_phase(d: f64) -> f64 {
    use std::f64::consts::PI;
    (d + PI).rem_euclid(2.0 * PI) - PI
}

/// Comb of user `u`: offset `u mod stride`.
pub fn user_comb(u: usize, stride: usize, k_total: usize) -> Vec<usize> {
    (u % stride + 1..=k_total).step_by(stride).collect()
}

/// Noiseless single-channel recovery of the first-mode generators.
pub fn run_generator_recovery(cfg: &ExperimentConfig) -> Result<RecoveryResult> {
    cfg.validate()?;
    let a = &cfg.array;
    let comb = user_comb(0, cfg.comb_stride, a.subcarriers);
    let dims = [a.n_col, a.n_row, comb.len(), a.n_pol];
    let (bound, _) = vsd_fort::generic_bound(dims);
    let mut warnings = Vec::new();
    let paths = cfg.recovery.paths.min(bound);
    if paths < cfg.recovery.paths {
        warnings.push(format!("requested {} paths clipped to the bound {bound}", cfg.recovery.paths));
    }
    if paths == 0 {
        return Err(Error::InvalidArgument("tensor dims admit no identifiable paths".into()));
    }
    let chan = channel::generate_separated_paths(paths, a, cfg.delay_limit(), derive_seed(cfg.seed, 0), 0)?;
    let full = channel::synthesize_channel(&chan, a)?;
    let idx: Vec<usize> = comb.iter().map(|k| k - 1).collect();
    let h_comb = full.select_mode3(&idx)?;
    let (est, rep) = vsd_fort::estimate_channel(&h_comb, &comb, a.subcarriers, &cfg.recovery.vsd)?;
    warnings.extend(rep.warnings.iter().cloned());

    let mut true_phase: Vec<f64> = chan.paths.iter().map(|p| a.col_generator(p.aoa_deg).arg()).collect();
    true_phase.sort_by(f64::total_cmp);
    let mut est_phase = rep.z1_phase.clone();
    est_phase.sort_by(f64::total_cmp);
    if est_phase.len() != true_phase.len() {
        warnings.push(format!("detected rank {} differs from {paths} paths", est_phase.len()));
    }
    let n = est_phase.len().min(true_phase.len());
    est_phase.truncate(n);
    true_phase.truncate(n);
    let max_phase_error = if rep.rank == paths {
        true_phase.iter().zip(&est_phase).map(|(t, e)| wrap_phase(e - t).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(RecoveryResult {
        dims,
        bound,
        paths,
        detected_rank: rep.rank,
        true_phase,
        est_phase,
        max_phase_error,
        residual: rep.residual,
        full_band_nmse: nmse(&full, &est)?,
        warnings,
    })
}

/// Writes `generator_recovery.csv` and a unit-circle scatter plot.
pub fn write_recovery_outputs(res: &RecoveryResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv = dir.join("generator_recovery.csv");
    fs::write(&csv, res.csv())?;
    let circle = |ph: &[f64]| ph.iter().map(|p| (p.cos(), p.sin())).collect();
    let svg = dir.join("generator_recovery.svg");
    plot::emit_plot(
        &[
            Series { name: "ground truth".into(), points: circle(&res.true_phase) },
            Series { name: "estimated".into(), points: circle(&res.est_phase) },
        ],
        &PlotSpec {
            title: format!("First-mode generators ({} paths)", res.paths),
            x_label: "real".into(),
            y_label: "imaginary".into(),
            log_y: false,
            kind: PlotKind::Scatter,
            equal_axes: true,
        },
        &svg,
    )?;
    Ok(vec![csv, svg])
}

// ---------------------------------------------------------------- sweep

/// Mean NMSE over users for one (method, SNR, trial) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub method: Method,
    pub snr_db: f64,
    pub trial: usize,
    pub nmse: f64,
    /// Mean detected rank over users (0 for the baseline).
    pub mean_rank: f64,
    /// Users whose structured estimate failed and fell back to the baseline.
    pub fallbacks: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<TrialResult>,
}

impl SweepResult {
    /// Long-format CSV `method,snr_db,trial,mean_nmse`, sorted by method,
    /// SNR, trial.
    pub fn csv(&self) -> String {
        let mut s = String::from("method,snr_db,trial,mean_nmse\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.method.name(), r.snr_db, r.trial, fmt_f(r.nmse));
        }
        s
    }

    /// Mean over trials for every (method, SNR), in row order.
    pub fn means(&self) -> Vec<(Method, f64, f64)> {
        let mut out: Vec<(Method, f64, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(m, s, _, _)| *m == r.method && *s == r.snr_db) {
                Some(e) => {
                    e.2 += r.nmse;
                    e.3 += 1;
                }
                None => out.push((r.method, r.snr_db, r.nmse, 1)),
            }
        }
        out.into_iter().map(|(m, s, sum, n)| (m, s, sum / n as f64)).collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,snr_db,mean_nmse\n");
        for (m, snr, v) in self.means() {
            let _ = writeln!(s, "{},{},{}", m.name(), snr, fmt_f(v));
        }
        s
    }

    pub fn mean(&self, method: Method, snr_db: f64) -> Option<f64> {
        self.means().into_iter().find(|(m, s, _)| *m == method && *s == snr_db).map(|t| t.2)
    }

    pub fn total_fallbacks(&self) -> usize {
        self.rows.iter().map(|r| r.fallbacks).sum()
    }
}

struct TrialScene {
    targets: Vec<ComplexTensor4>,
    interference: Vec<ComplexTensor4>,
    pilots: PilotGrid,
}

fn build_scene(cfg: &ExperimentConfig, profile: &PathProfile, trial_seed: u64) -> Result<TrialScene> {
    let a = &cfg.array;
    let mut chans = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        chans.push(channel::generate_paths(
            profile,
            cfg.paths,
            a,
            cfg.delay_limit(),
            derive_seed(trial_seed, 10 + u as u64),
            u,
        )?);
    }
    let targets = chans.iter().map(|c| channel::synthesize_channel(c, a)).collect::<Result<Vec<_>>>()?;
    let interference = (0..cfg.n_interference())
        .map(|i| {
            let src = &chans[i % chans.len()];
            let pert = channel::perturb_for_interference(src, derive_seed(trial_seed, 100_000 + i as u64), &cfg.perturb);
            channel::synthesize_channel(&pert, a)
        })
        .collect::<Result<Vec<_>>>()?;
    let pilots = airlink::make_comb_pilots(cfg.users, a.subcarriers, cfg.comb_stride, cfg.pilot_symbols, derive_seed(trial_seed, 1))?;
    Ok(TrialScene { targets, interference, pilots })
}

#[derive(Default, Clone, Copy)]
struct Acc {
    nmse: f64,
    rank: f64,
    fallbacks: usize,
    secs: f64,
}

/// All methods for one trial at every SNR. Received grids at different SNRs
/// share their random draws so only the noise scale differs.
fn run_trial(cfg: &ExperimentConfig, profile: &PathProfile, trial: usize) -> Result<Vec<TrialResult>> {
    let trial_seed = derive_seed(cfg.seed, trial as u64);
    let scene = build_scene(cfg, profile, trial_seed)?;
    let k_total = cfg.array.subcarriers;
    let want = |m: Method| cfg.methods.contains(&m);
    let mut out = Vec::new();
    for &snr in &cfg.snr_db {
        let budget = LinkBudget { snr_db: snr, isr_db: cfg.isr_db };
        let interference = if cfg.isr_db.is_finite() { &scene.interference[..] } else { &[] };
        let y = airlink::synthesize_received(&scene.targets, &scene.pilots, budget, interference, derive_seed(trial_seed, 2))?;
        let mut acc = [Acc::default(); 3];
        for (u, truth) in scene.targets.iter().enumerate() {
            let comb = &scene.pilots.users[u].comb;
            let h_comb = airlink::ls_comb_estimate(&y, &scene.pilots, u)?;
            let t0 = Instant::now();
            let baseline = airlink::linear_interpolate(&h_comb, comb, k_total)?;
            acc[0].secs += t0.elapsed().as_secs_f64();
            if want(Method::Baseline) {
                acc[0].nmse += nmse(truth, &baseline)?;
            }
            let mut rank = 0;
            if want(Method::VsdFort) || want(Method::Als) {
                let t0 = Instant::now();
                match vsd_fort::estimate_channel(&h_comb, comb, k_total, &cfg.vsd) {
                    Ok((est, rep)) => {
                        rank = rep.rank;
                        acc[2].nmse += nmse(truth, &est)?;
                        acc[2].rank += rep.rank as f64;
                    }
                    Err(_) => {
                        acc[2].nmse += nmse(truth, &baseline)?;
                        acc[2].fallbacks += 1;
                        rank = fallback_rank(&h_comb, &cfg.vsd)?;
                    }
                }
                acc[2].secs += t0.elapsed().as_secs_f64();
            }
            if want(Method::Als) {
                let t0 = Instant::now();
                let dims = h_comb.dims();
                let total: usize = dims.iter().product();
                let cap = dims.iter().map(|d| total / d).min().unwrap_or(1);
                let r = rank.clamp(1, cap);
                let opts = AlsOptions {
                    rank: r,
                    max_iters: cfg.als.max_iters,
                    rel_tol: cfg.als.rel_tol,
                    init: cfg.als.init,
                    seed: derive_seed(trial_seed, 1_000 + u as u64),
                };
                let est = als::cp_als(&h_comb, &opts)
                    .and_then(|res| als::extend_to_full_band(&res.factors, comb, k_total))
                    .and_then(|f| cp_reconstruct(&f, truth.dims()));
                match est {
                    Ok(est) => acc[1].nmse += nmse(truth, &est)?,
                    Err(_) => {
                        acc[1].nmse += nmse(truth, &baseline)?;
                        acc[1].fallbacks += 1;
                    }
                }
                acc[1].rank += r as f64;
                acc[1].secs += t0.elapsed().as_secs_f64();
            }
        }
        let n = scene.targets.len() as f64;
        for (i, m) in [Method::Baseline, Method::Als, Method::VsdFort].into_iter().enumerate() {
            if want(m) {
                out.push(TrialResult {
                    method: m,
                    snr_db: snr,
                    trial,
                    nmse: acc[i].nmse / n,
                    mean_rank: acc[i].rank / n,
                    fallbacks: acc[i].fallbacks,
                    wall_time_s: acc[i].secs,
                });
            }
        }
    }
    Ok(out)
}

/// Rank the structured method would have used, for ALS when the structured
/// solve itself failed.
fn fallback_rank(h_comb: &ComplexTensor4, opts: &VsdOptions) -> Result<usize> {
    let dims = h_comb.dims();
    let sp = match opts.smoothing {
        Some(k) => vsd_fort::SmoothingParams::from_windows(dims, k)?,
        None => vsd_fort::generic_bound(dims).1.ok_or_else(|| Error::InvalidArgument("no smoothing".into()))?,
    };
    let xh = vsd_fort::hankelize(h_comb, &sp)?;
    let cap = sp.capacity(dims[3]).min(opts.max_rank.unwrap_or(usize::MAX));
    let rule = if let RankRule::Fixed(n) = opts.rank_rule { RankRule::Fixed(n) } else { RankRule::RelativeThreshold };
    Ok(vsd_fort::signal_subspace(&xh, rule, opts.eps_rel, cap)?.rank)
}

/// Monte-Carlo NMSE sweep. Trials run in parallel on the current rayon
/// pool; results are keyed by trial index, so output does not depend on
/// scheduling.
pub fn run_nmse_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.users > cfg.comb_stride * cfg.pilot_symbols {
        return Err(Error::Infeasible(format!(
            "{} users do not fit {} combs x {} pilot symbols",
            cfg.users, cfg.comb_stride, cfg.pilot_symbols
        )));
    }
    let profile = cfg.profile()?;
    let per_trial = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, &profile, t))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<TrialResult> = per_trial.into_iter().flatten().collect();
    let snr_pos = |s: f64| cfg.snr_db.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (r.method, snr_pos(r.snr_db), r.trial));
    Ok(SweepResult { rows })
}

/// Writes `nmse_trials.csv`, `nmse_summary.csv` and `nmse_vs_snr.svg`.
pub fn write_sweep_outputs(res: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let trials = dir.join("nmse_trials.csv");
    fs::write(&trials, res.csv())?;
    let summary = dir.join("nmse_summary.csv");
    fs::write(&summary, res.summary_csv())?;
    let means = res.means();
    let mut series: Vec<Series> = Vec::new();
    for m in Method::ALL {
        let points: Vec<(f64, f64)> = means.iter().filter(|t| t.0 == m).map(|t| (t.1, t.2)).collect();
        if !points.is_empty() {
            series.push(Series { name: m.name().into(), points });
        }
    }
    let svg = dir.join("nmse_vs_snr.svg");
    plot::emit_plot(
        &series,
        &PlotSpec {
            title: "Mean NMSE versus SNR".into(),
            x_label: "SNR (dB)".into(),
            y_label: "NMSE".into(),
            log_y: true,
            kind: PlotKind::Line,
            equal_axes: false,
        },
        &svg,
    )?;
    Ok(vec![trials, summary, svg])
}

// ---------------------------------------------------------------- params

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub raw: u64,
    pub reparameterized: u64,
}

impl ParamCount {
    pub fn ratio(&self) -> f64 {
        self.raw as f64 / self.reparameterized as f64
    }
}

/// Raw channel unknowns `U·n_col·n_row·n_pol·K` against per-path unknowns
/// `U·L·(2 angles + 1 delay + 2·n_pol gain reals)`.
pub fn param_count(cfg: &ExperimentConfig) -> ParamCount {
    let a = &cfg.array;
    let u = cfg.users as u64;
    ParamCount {
        raw: u * (a.n_col * a.n_row * a.n_pol * a.subcarriers) as u64,
        reparameterized: u * cfg.paths as u64 * (3 + 2 * a.n_pol as u64),
    }
}

pub fn param_count_report(cfg: &ExperimentConfig) -> String {
    let p = param_count(cfg);
    format!(
        "raw unknowns: {} ({} users x {}x{} antennas x {} pol x {} subcarriers)\n\
         re-parameterized unknowns: {} ({} users x {} paths x {} reals per path)\n\
         reduction ratio: {:.2}\n\
         reference order of magnitude: 1,000,000 -> 30,000\n",
        p.raw,
        cfg.users,
        cfg.array.n_col,
        cfg.array.n_row,
        cfg.array.n_pol,
        cfg.array.subcarriers,
        p.reparameterized,
        cfg.users,
        cfg.paths,
        3 + 2 * cfg.array.n_pol,
        p.ratio()
    )
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Serialize)]
pub struct Manifest<'a, T: Serialize> {
    pub command: &'a str,
    pub crate_version: &'a str,
    pub linalg_backend: &'a str,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub details: T,
}

pub fn write_manifest<T: Serialize>(dir: &Path, manifest: &Manifest<'_, T>) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(manifest)?)?;
    Ok(path)
}
