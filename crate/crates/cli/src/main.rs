use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stvol::config::{ExperimentConfig, SynthConfig};
use stvol::experiment::{run_experiment, run_simulate, run_weights};
use stvol::panel::{diagnostics, load_panel, PanelFormat, ReturnsPanel};

#[derive(Parser)]
#[command(name = "stvol", version, about = "Spatiotemporal volatility experiments")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured model grid and write forecasts, metrics and DM reports.
    Run { config: PathBuf },
    /// Write a synthetic returns panel.
    Simulate { config: PathBuf },
    /// Build the configured weight matrices only.
    Weights { config: PathBuf },
    /// Per-asset moments and ARCH-LM tests of a panel.
    Diagnostics {
        input: PathBuf,
        /// The input holds prices.
        #[arg(long)]
        prices: bool,
        #[arg(long, default_value_t = 5)]
        arch_lags: usize,
        /// Write CSV here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn diagnose(input: &Path, prices: bool, arch_lags: usize, output: Option<&Path>) -> stvol::Result<()> {
    let raw = load_panel(input, PanelFormat::WideCsv)?;
    let panel = if prices { ReturnsPanel::from_prices(&raw)? } else { raw };
    let d = diagnostics(&panel, arch_lags)?;
    match output {
        Some(p) => d.write_csv(fs::File::create(p)?),
        None => d.write_csv(std::io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Run { config } => fs::read_to_string(config)
            .map_err(stvol::Error::from)
            .and_then(|text| {
                let cfg = ExperimentConfig::from_file(config)?;
                run_experiment(&cfg, &text)
            })
            .map(|s| {
                eprintln!(
                    "{} of {} cells succeeded; reports in {}",
                    s.succeeded,
                    s.cells,
                    s.output.display()
                );
            }),
        Command::Simulate { config } => SynthConfig::from_file(config)
            .and_then(|cfg| run_simulate(&cfg).map(|p| (cfg, p)))
            .map(|(cfg, p)| eprintln!("wrote {} x {} panel to {}", p.t(), p.n(), cfg.output.display())),
        Command::Weights { config } => ExperimentConfig::from_file(config).and_then(|cfg| {
            let built = run_weights(&cfg)?;
            let mut err = std::io::stderr().lock();
            for (kind, w) in &built {
                match w {
                    Ok(_) => writeln!(err, "{kind}: ok")?,
                    Err(e) => writeln!(err, "{kind}: {e}")?,
                }
            }
            Ok(())
        }),
        Command::Diagnostics {
            input,
            prices,
            arch_lags,
            output,
        } => diagnose(input, *prices, *arch_lags, output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
