//! `rough-milstein`: run experiment configs, the signature self-test, or a
//! quick fBm sampler from the command line.
//!
//! Exit codes: 0 when the experiment's acceptance predicate passes, 2 when
//! it was evaluated and failed, 1 for any execution error (bad usage, bad
//! config, I/O, numerics).

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rough_milstein_core::error::Result;
use rough_milstein_core::experiments::{self, ExperimentConfig, RunManifest};
use std::path::PathBuf;

/// Default output root when neither `--out` nor the config says otherwise.
const OUT_ENV: &str = "ROUGH_MILSTEIN_OUT";

#[derive(Parser)]
#[command(
    name = "rough-milstein",
    version,
    about = "Strong-approximation experiments for SDEs driven by fractional Brownian motion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment config file and write its artifacts.
    Run {
        /// Config file: a `[kind]` header followed by `key = value` lines.
        config: PathBuf,
        /// Output directory. Falls back to the config's `out`, then
        /// $ROUGH_MILSTEIN_OUT/<kind>-seed<seed>, then runs/<kind>-seed<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker-pool width for path-level parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the randomized signature-algebra suites (Chen, inverse, shuffle,
    /// segment closed forms).
    Selftest {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample fractional Brownian motion paths to CSV.
    Fbm {
        /// Hurst index in (0, 1).
        #[arg(long)]
        hurst: f64,
        /// Steps on [0, horizon]; a power of two.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        paths: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let parsed = experiments::validate_config(&text)?;
            let out_dir = resolve_out(out, &parsed);
            let manifest = experiments::run(&parsed, &out_dir, threads)?;
            report(&manifest, &out_dir);
            Ok(manifest.pass)
        }
        Command::Selftest {
            instances,
            seed,
            out,
        } => {
            let text = format!("[signature-selftest]\ninstances = {instances}\nseed = {seed}\n");
            let parsed = experiments::validate_config(&text)?;
            let out_dir = resolve_out(out, &parsed);
            let manifest = experiments::run(&parsed, &out_dir, None)?;
            report(&manifest, &out_dir);
            Ok(manifest.pass)
        }
        Command::Fbm {
            hurst,
            n,
            seed,
            dim,
            paths,
            horizon,
            out,
        } => {
            let text = format!(
                "[fbm-sample]\nhurst = {hurst}\nn = {n}\nseed = {seed}\ndim = {dim}\npaths = {paths}\nhorizon = {horizon}\n"
            );
            let parsed = experiments::validate_config(&text)?;
            let out_dir = resolve_out(out, &parsed);
            let manifest = experiments::run(&parsed, &out_dir, None)?;
            report(&manifest, &out_dir);
            Ok(manifest.pass)
        }
    }
}

fn resolve_out(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| config.out_dir.clone()).unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{}-seed{}", config.kind.id(), config.seed))
    })
}

fn report(manifest: &RunManifest, out_dir: &std::path::Path) {
    for artifact in &manifest.artifacts {
        println!(
            "wrote {} (sha256 {})",
            out_dir.join(&artifact.file).display(),
            &artifact.sha256[..12]
        );
    }
    println!("wrote {}", out_dir.join("manifest.json").display());
    println!(
        "{} seed {}: {} ({:.2} s)",
        manifest.kind,
        manifest.master_seed,
        if manifest.pass { "pass" } else { "FAIL" },
        manifest.wall_clock_seconds
    );
}
