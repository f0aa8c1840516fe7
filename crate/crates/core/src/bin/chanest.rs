use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use chanest::bench::{self, ExperimentConfig, Manifest, Method};
use chanest::vsd_fort;

#[derive(Parser)]
#[command(name = "chanest", version, about = "Structured tensor channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Noiseless recovery of first-mode generators at high rank.
    GenRecovery {
        /// Experiment config (JSON); the bundled scenario when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Requested path count (clipped to the generic bound).
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo NMSE versus SNR for the selected methods.
    NmseSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated SNR grid in dB.
        #[arg(long, value_delimiter = ',')]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated subset of baseline, als, vsd_fort.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for trials (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generic identifiability bound and its smoothing for tensor dims.
    Bound {
        /// Dims as I1,I2,I3,I4.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
    },
    /// Raw versus re-parameterized unknown counts.
    ParamReport {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(config: Option<PathBuf>) -> chanest::Result<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(&p),
        None => Ok(ExperimentConfig::table1()),
    }
}

fn paths_to_strings(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn run(cli: Cli) -> chanest::Result<()> {
    match cli.cmd {
        Cmd::GenRecovery { config, seed, paths, out } => {
            let mut cfg = load(config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = paths {
                cfg.recovery.paths = p;
            }
            let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            let t = Instant::now();
            let res = bench::with_threads(None, || bench::run_generator_recovery(&cfg))??;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            let files = bench::write_recovery_outputs(&res, &dir)?;
            println!("{}", res.summary());
            bench::write_manifest(
                &dir,
                &Manifest {
                    command: "gen-recovery",
                    crate_version: env!("CARGO_PKG_VERSION"),
                    linalg_backend: "faer 0.24",
                    seed: cfg.seed,
                    config: &cfg,
                    outputs: paths_to_strings(&files),
                    wall_time_s: t.elapsed().as_secs_f64(),
                    details: serde_json::json!({
                        "bound": res.bound,
                        "paths": res.paths,
                        "detected_rank": res.detected_rank,
                        "max_phase_error": res.max_phase_error,
                        "warnings": res.warnings,
                    }),
                },
            )?;
        }
        Cmd::NmseSweep { config, snr, trials, methods, seed, out, threads } => {
            let mut cfg = load(config)?;
            if let Some(s) = snr {
                cfg.snr_db = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(m) = methods {
                cfg.methods = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            let t = Instant::now();
            let res = bench::with_threads(threads, || bench::run_nmse_sweep(&cfg))??;
            let files = bench::write_sweep_outputs(&res, &dir)?;
            print!("{}", res.summary_csv());
            let mut time_by_method = std::collections::BTreeMap::new();
            for r in &res.rows {
                *time_by_method.entry(r.method.name()).or_insert(0.0) += r.wall_time_s;
            }
            bench::write_manifest(
                &dir,
                &Manifest {
                    command: "nmse-sweep",
                    crate_version: env!("CARGO_PKG_VERSION"),
                    linalg_backend: "faer 0.24",
                    seed: cfg.seed,
                    config: &cfg,
                    outputs: paths_to_strings(&files),
                    wall_time_s: t.elapsed().as_secs_f64(),
                    details: serde_json::json!({
                        "fallbacks": res.total_fallbacks(),
                        "method_time_s": time_by_method,
                    }),
                },
            )?;
        }
        Cmd::Bound { dims } => {
            let d: [usize; 4] = dims
                .try_into()
                .map_err(|_| chanest::Error::InvalidArgument("need exactly four dims".into()))?;
            let (b, sp) = vsd_fort::generic_bound(d);
            match sp {
                Some(sp) => println!(
                    "bound {b} at K=({},{},{}) L=({},{},{})",
                    sp.k1, sp.k2, sp.k3, sp.l1, sp.l2, sp.l3
                ),
                None => println!("bound 0 (first dimension must be at least 2)"),
            }
        }
        Cmd::ParamReport { config } => {
            let cfg = load(config)?;
            print!("{}", bench::param_count_report(&cfg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
