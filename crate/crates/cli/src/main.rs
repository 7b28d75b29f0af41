use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use dpfl::config::{load_config, ExperimentConfig};
use dpfl::experiment::{self, ExperimentError};
use dpfl::verify::{self, Faults};

const EXIT_CONFIG: u8 = 1;
const EXIT_CHECK: u8 = 2;

#[derive(Parser)]
#[command(name = "dpfl", version, about = "Clustered federated learning under d-privacy")]
struct Cli {
    /// Overrides the output directory named in the config.
    #[arg(long, global = true, env = "DPFL_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write rounds.csv, releases.csv, summary.json, ledger.json.
    Run { config: PathBuf },
    /// Draw Laplace noise and compare its moments with the closed forms.
    Sample {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep (k, nu, seed) and write the fairness tables.
    Fairness { config: PathBuf },
    /// Run the invariant battery.
    Verify,
}

fn load(path: &Path) -> Result<(ExperimentConfig, PathBuf), ExitCode> {
    load_config(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn out_dir(cli_dir: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    cli_dir.clone().unwrap_or_else(|| cfg.output.directory.clone())
}

fn fail(e: ExperimentError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "unbounded (raw releases)".into())
}

fn run(config: &Path, dir: &Option<PathBuf>) -> ExitCode {
    let (cfg, base) = match load(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let out = out_dir(dir, &cfg);
    match experiment::run_experiment(&cfg, &base, &out) {
        Ok(o) => {
            let s = &o.summary;
            println!("rounds run             {}", s.rounds_run);
            println!(
                "final validation loss  {}",
                s.final_validation_loss.map_or("n/a".into(), |v| format!("{v:.6}"))
            );
            println!(
                "best validation loss   {} (round {})",
                s.best_validation_loss.map_or("n/a".into(), |v| format!("{v:.6}")),
                s.best_round.map_or("n/a".into(), |r| r.to_string())
            );
            println!("median client epsilon  {}", fmt_opt(s.median_epsilon));
            println!("max client epsilon     {}", fmt_opt(s.max_epsilon));
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn fairness(config: &Path, dir: &Option<PathBuf>) -> ExitCode {
    let (cfg, base) = match load(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let out = out_dir(dir, &cfg);
    match experiment::fairness_sweep(&cfg, &base, &out) {
        Ok((sweep, files)) => {
            println!("{:>3} {:>8} {:<24} {:>10} {:>10} {:>5}", "k", "nu", "metric", "mean", "std_err", "cells");
            for m in &sweep.means {
                println!(
                    "{:>3} {:>8} {:<24} {:>10.5} {:>10.5} {:>5}",
                    m.k, m.nu, m.metric, m.mean, m.std_err, m.cells
                );
            }
            for c in sweep.cells.iter().filter(|c| c.error.is_some()) {
                eprintln!(
                    "cell k={} nu={} seed={} failed: {}",
                    c.k,
                    c.nu,
                    c.seed,
                    c.error.as_deref().unwrap_or_default()
                );
            }
            for f in &files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn sample(dim: usize, epsilon: f64, count: usize, seed: u64) -> ExitCode {
    match experiment::sample_report(dim, epsilon, count, seed) {
        Ok(r) => {
            print!("{r}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn run_verify() -> ExitCode {
    let faults = match Faults::from_env() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {}: {e}", verify::FAULT_ENV);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let report = verify::run_all(&faults);
    for c in &report.checks {
        println!("{c}");
    }
    if report.all_passed() {
        println!("all {} checks passed", report.checks.len());
        ExitCode::SUCCESS
    } else {
        let names: Vec<_> = report.failed().map(|c| c.name).collect();
        eprintln!("failed checks: {}", names.join(", "));
        ExitCode::from(EXIT_CHECK)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config } => run(config, &cli.output_dir),
        Command::Sample {
            dim,
            epsilon,
            count,
            seed,
        } => sample(*dim, *epsilon, *count, *seed),
        Command::Fairness { config } => fairness(config, &cli.output_dir),
        Command::Verify => run_verify(),
    }
}
