use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use adazero::harness::{self, RunConfig, RunLog};
use adazero::nn::GradCheckConfig;
use adazero::theory;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

/// Relative error above which a gradient check fails.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "adazero", version, about = "Adaptive intrinsic-reward exploration lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one seed of a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `total_steps` from the config.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Numerically check the entropy results behind adaptive mixing.
    VerifyTheory {
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a run's visit density as a heatmap.
    PlotDensity { runlog: PathBuf },
    /// Median metrics across seeds, per variant.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runlogs: Vec<PathBuf>,
        /// Write the aligned per-update series here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every network's backward pass.
    GradCheck {
        #[arg(long, default_value_t = 13)]
        height: usize,
        #[arg(long, default_value_t = 13)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means the command ran but a checked invariant failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            seed,
            output_dir,
            steps,
        } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(steps) = steps {
                cfg.total_steps = steps;
                cfg.validate()?;
            }
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let start = Instant::now();
            let (dir, summary) = harness::train(&cfg, seed)?;
            eprintln!(
                "{} seed {seed}: {} steps in {:.1}s -> {}",
                cfg.variant.name(),
                summary.total_steps,
                start.elapsed().as_secs_f64(),
                dir.display()
            );
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(true)
        }
        Command::VerifyTheory { samples, seed } => {
            let start = Instant::now();
            let report = theory::verify_all(samples, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            eprintln!(
                "{} in {:.2}s",
                if report.passed { "PASS" } else { "FAIL" },
                start.elapsed().as_secs_f64()
            );
            Ok(report.passed)
        }
        Command::PlotDensity { runlog } => {
            let (png, coverage) = harness::plot_density(&runlog)?;
            println!("{} coverage={coverage}", png.display());
            Ok(true)
        }
        Command::Compare { runlogs, out } => {
            let logs = runlogs.into_iter().map(RunLog::open).collect::<adazero::Result<Vec<_>>>()?;
            let cmp = harness::compare_runs(&logs)?;
            cmp.write_variants_csv(std::io::stderr())?;
            match out {
                Some(path) => {
                    let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    cmp.write_series_csv(f)?;
                }
                None => cmp.write_series_csv(std::io::stdout())?,
            }
            Ok(true)
        }
        Command::GradCheck { height, width, seed } => {
            if height < 7 || width < 7 {
                bail!("grad-check needs at least a 7x7 observation");
            }
            let start = Instant::now();
            let checks = harness::check_component_gradients(&[1, height, width], seed, GradCheckConfig::default())?;
            let mut ok = true;
            for c in &checks {
                let pass = c.report.max_relative_error < GRAD_TOLERANCE;
                ok &= pass;
                println!(
                    "{:<12} params={:<7} max_rel_err={:.3e} {}",
                    c.network,
                    c.report.params_checked,
                    c.report.max_relative_error,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            eprintln!("{:.2}s", start.elapsed().as_secs_f64());
            Ok(ok)
        }
    }
}
