use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sill_koopman::cli_io::{self, CliError, DemoKind};

#[derive(Parser)]
#[command(name = "sill", version, about = "Koopman generator experiments with SILL dictionaries")]
struct Cli {
    /// Worker threads for ensembles and sweeps (default: all hardware threads).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit W, assemble K_G and write model.json plus fit_report.json.
    Fit { config: PathBuf },
    /// Integrate the reference and lifted systems for every initial condition.
    Simulate { model: PathBuf, config: PathBuf },
    /// Refit at each configured alpha and tabulate pair and closure errors.
    SweepAlpha { config: PathBuf },
    /// Sup-error table, trajectory budget and measured error.
    ErrorBounds { model: PathBuf, config: PathBuf },
    /// Write a canned config to OUTDIR and run fit, simulate and error-bounds.
    Demo { system: DemoSystem, outdir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoSystem {
    Vdp,
    Toggle,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { config } => {
            let out = cli_io::cmd_fit(&config)?;
            println!("rel_l2_error {:?}", out.regression.rel_l2_error);
            println!("wrote {}", out.model_path.display());
            println!("wrote {}", out.report_path.display());
        }
        Command::Simulate { model, config } => {
            let out = cli_io::cmd_simulate(&model, &config)?;
            for r in &out.runs {
                println!(
                    "x0 {:?}: rmse {:.4e} relative {:.4e}{}",
                    r.x0,
                    r.rmse,
                    r.relative_rmse,
                    if r.prediction_diverged { " (prediction diverged)" } else { "" }
                );
            }
            println!("wrote {}", out.summary_path.display());
        }
        Command::SweepAlpha { config } => {
            let out = cli_io::cmd_sweep_alpha(&config)?;
            for r in &out.rows {
                println!(
                    "alpha {}: max pair error {:.4e}, closure residual {:.4e}",
                    r.alpha, r.max_pair_error, r.closure_residual_l2
                );
            }
            println!("wrote {}", out.csv_path.display());
        }
        Command::ErrorBounds { model, config } => {
            let out = cli_io::cmd_error_bounds(&model, &config)?;
            println!("total rate {:.4e}", out.report.bounds.total_rate);
            println!("wrote {}", out.report_path.display());
        }
        Command::Demo { system, outdir } => {
            let kind = match system {
                DemoSystem::Vdp => DemoKind::Vdp,
                DemoSystem::Toggle => DemoKind::Toggle,
            };
            let out = cli_io::cmd_demo(kind, &outdir)?;
            println!("rel_l2_error {:?}", out.fit.regression.rel_l2_error);
            for r in &out.simulate.runs {
                println!("x0 {:?}: relative rmse {:.4e}", r.x0, r.relative_rmse);
            }
            println!("wrote results to {}", outdir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
