use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pal_core::harness::run_pal;
use pal_core::report::write_run;
use pal_core::sweep::{run_sweep, sweep_csv, SweepAxis};
use pal_core::verify::{run_verify, VerifyOptions};
use pal_core::{PalError, RunConfig};

#[derive(Parser)]
#[command(
    name = "pal",
    version,
    about = "Prompted analytic class-incremental learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one method over the task stream.
    Run {
        /// TOML config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `seeds.run_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat `run` along one config axis and tabulate Acc/FG.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// num_tasks (k), missing_rate (eta_miss), up_dim (d_up), reg (eta_reg),
        /// pool_size, prompt_length, prompt_layers.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values; prompt_layers takes `0..2` or `0+3` forms.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical oracle suite.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, hide = true)]
        corrupt_update: bool,
    },
}

fn load(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig, PalError> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seeds.run_seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<(), PalError> {
    let cfg = load(config, seed, out)?;
    let outcome = run_pal(&cfg)?;
    let paths = write_run(Path::new(&cfg.output_dir), &cfg, &outcome)?;
    print!(
        "{}: acc {:.4}",
        cfg.method.name(),
        outcome.average_accuracy()
    );
    if let Some(fg) = outcome.forgetting() {
        print!("  fg {fg:.4}");
    }
    println!();
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn sweep(
    config: Option<&Path>,
    axis: SweepAxis,
    values: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), PalError> {
    let cfg = load(config, seed, out)?;
    let rows = run_sweep(&cfg, axis, values)?;
    let csv = sweep_csv(axis, &rows);
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = Path::new(&cfg.output_dir).join("sweep.csv");
    std::fs::write(&path, &csv)?;
    print!("{csv}");
    println!("wrote {}", path.display());
    Ok(())
}

fn verify(seed: Option<u64>, corrupt_update: bool) -> ExitCode {
    let report = run_verify(VerifyOptions {
        seed,
        corrupt_update,
    });
    println!("verify seed {}", report.seed);
    for c in &report.checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        match c.failing_seed {
            Some(s) => println!("{mark} {:<28} {} (seed {s})", c.name, c.detail),
            None => println!("{mark} {:<28} {}", c.name, c.detail),
        }
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn finish(result: Result<(), PalError>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, seed, out } => finish(run(config.as_deref(), seed, out.as_deref())),
        Command::Sweep {
            config,
            axis,
            values,
            seed,
            out,
        } => finish(sweep(
            config.as_deref(),
            axis,
            &values,
            seed,
            out.as_deref(),
        )),
        Command::Verify {
            seed,
            corrupt_update,
        } => verify(seed, corrupt_update),
    }
}
