use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tcl_desync::commands::{self, CliError, OutputOptions, Report, SingleTclArgs};
use tcl_desync::OUTPUT_DIR_ENV;
use tcl_desync_core::averaging::MAX_ITERATIONS;
use tcl_desync_core::thermostat::{Mode, ThermalSpec};

#[derive(Parser)]
#[command(version, about = "Simulate and desynchronize populations of thermostatically controlled loads")]
struct Cli {
    /// Directory for CSV outputs and manifest.json.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Override the random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Default output root when neither --output-dir nor the config sets one.
    #[arg(long, env = OUTPUT_DIR_ENV, hide = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a population scenario file.
    Simulate { config: PathBuf },
    /// Iterate the timing-averaging map and check its fixed point.
    AnalyzeConvergence {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        period: f64,
        #[arg(long, default_value_t = MAX_ITERATIONS)]
        max_iters: usize,
    },
    /// Simulate one device and print its closed-form cycle.
    SingleTcl {
        #[arg(long, default_value_t = ThermalSpec::REFERENCE.r)]
        r: f64,
        #[arg(long, default_value_t = ThermalSpec::REFERENCE.c)]
        c: f64,
        #[arg(long, default_value_t = ThermalSpec::REFERENCE.p)]
        p: f64,
        #[arg(long, default_value_t = ThermalSpec::REFERENCE.eta)]
        eta: f64,
        #[arg(long, default_value_t = ThermalSpec::REFERENCE.setpoint)]
        setpoint: f64,
        #[arg(long, default_value_t = ThermalSpec::REFERENCE.deadband)]
        deadband: f64,
        #[arg(long, default_value_t = ThermalSpec::REFERENCE.ambient)]
        ambient: f64,
        /// Heating device instead of cooling.
        #[arg(long)]
        heating: bool,
        #[arg(long, default_value_t = 40.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Setpoint step in °C.
        #[arg(long)]
        delta: Option<f64>,
        /// Time of the setpoint step in hours.
        #[arg(long, default_value_t = 10.0)]
        delta_time: f64,
    },
}

fn execute(cli: Cli) -> Result<Report, CliError> {
    let out = OutputOptions {
        output_dir: cli.output_dir,
        env_dir: cli.output_root,
    };
    match cli.command {
        Command::Simulate { config } => commands::simulate(&config, cli.seed, &out),
        Command::AnalyzeConvergence { n, period, max_iters } => {
            commands::analyze_convergence(n, period, cli.seed.unwrap_or(1), max_iters, &out)
        }
        Command::SingleTcl {
            r,
            c,
            p,
            eta,
            setpoint,
            deadband,
            ambient,
            heating,
            horizon,
            step,
            delta,
            delta_time,
        } => {
            let args = SingleTclArgs {
                spec: ThermalSpec {
                    r,
                    c,
                    p,
                    eta,
                    setpoint,
                    deadband,
                    ambient,
                    mode: if heating { Mode::Heating } else { Mode::Cooling },
                },
                horizon,
                step,
                delta: delta.map(|d| (delta_time, d)),
                seed: cli.seed.unwrap_or(1),
            };
            commands::single_tcl(&args, &out)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(report) => {
            for line in &report.summary {
                println!("{line}");
            }
            println!("outputs          {}", report.manifest.output_dir);
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
