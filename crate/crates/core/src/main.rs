use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ksflow::adapt::IndicatorMode;
use ksflow::driver::{run, run_linear_oracle, RunConfig};

#[derive(Parser)]
#[command(version, about = "Adaptive finite-element Kohn–Sham ground states by orthonormality-preserving gradient flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration (a file path or a built-in name: he, h2, h2_paper, lih, harmonic).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        maxrefine: Option<usize>,
        /// Compare the flow with a dense eigensolver (linear models only).
        #[arg(long)]
        oracle_linear: bool,
        /// Write density_<k>.vtk per level and density_final.vtk.
        #[arg(long)]
        export_density: bool,
        #[arg(long, value_parser = parse_mode)]
        indicator_mode: Option<IndicatorMode>,
        /// Seed for random initial orbitals (implies `init = random`).
        #[arg(long)]
        seed: Option<u64>,
        /// Omit wall-clock times so identical runs give identical summaries.
        #[arg(long)]
        deterministic: bool,
        /// Output directory (defaults to `out/<config name>`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<IndicatorMode, String> {
    s.parse().map_err(|e: ksflow::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Run {
        config,
        maxrefine,
        oracle_linear,
        export_density,
        indicator_mode,
        seed,
        deterministic,
        output,
    } = Cli::parse().command;

    let mut config = match RunConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(k) = maxrefine {
        config.maxrefine = k;
    }
    if let Some(mode) = indicator_mode {
        config.indicator = mode;
    }
    if let Some(seed) = seed {
        config.seed = seed;
        config.init = ksflow::driver::InitialGuess::Random;
    }
    config.export_density |= export_density;
    config.deterministic |= deterministic;
    config.output_dir = Some(output.unwrap_or_else(|| PathBuf::from("out").join(&config.name)));

    if oracle_linear {
        return match run_linear_oracle(&config) {
            Ok(report) => {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }

    let report = run(&config);
    if let Some(e) = &report.error {
        eprintln!("error: {e}");
    }
    for level in &report.summary.levels {
        println!(
            "level {:>2}  dofs {:>8}  E = {:.8}  |grad| = {:.3e}  steps {}",
            level.level, level.dofs, level.energy.total, level.grad_norm, level.steps
        );
    }
    println!("termination: {}", report.summary.termination);
    ExitCode::from(report.exit_code() as u8)
}
