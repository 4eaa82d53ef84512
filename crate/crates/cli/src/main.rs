use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geogate_cli::commands::{
    cmd_cdd_bench, cmd_optimize, cmd_table1, parse_axes, parse_gate, parse_method, verify_controls, TABLE1_HEADER,
};
use geogate_cli::config::{RunConfig, CONFIG_ENV};
use geogate_cli::output::{create_dir, read_controls_csv, write_json};
use geogate_cli::{exit, CliError};

#[derive(Parser)]
#[command(name = "geogate", version, about = "Minimal-energy two-qubit gates on a CDD-stabilized drift")]
struct Cli {
    /// JSON config file; defaults to $GEOGATE_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fidelity of the CDD-driven native evolution against exp(−iH_dτ).
    CddBench {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize controls for one gate and control distribution.
    Optimize {
        /// variational, montecarlo or krotov.
        #[arg(long)]
        method: String,
        /// cz, cx, r or custom:<path to JSON matrix>.
        #[arg(long)]
        gate: String,
        /// xyz, yz, xz or xy.
        #[arg(long, default_value = "xyz")]
        axes: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the SVG plots.
        #[arg(long)]
        no_plots: bool,
    },
    /// Propagate saved controls together with the CDD drive.
    Verify {
        /// controls.csv as written by `optimize`.
        #[arg(long)]
        controls: PathBuf,
        #[arg(long)]
        gate: String,
        /// Also write verify.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All eight benchmark rows with every method.
    Table1 {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let config = RunConfig::load(cli.config.as_deref())?;
    let out_or_default = |out: Option<PathBuf>| out.unwrap_or_else(|| config.output_dir.clone());
    match cli.command {
        Command::CddBench { out } => {
            let out = out_or_default(out);
            let rows = cmd_cdd_bench(&config, &out)?;
            println!("{:>14} {:>10} {:>12}", "omega/2pi GHz", "steps", "F_CDD");
            for r in &rows {
                let f = r.frequency_ghz.map(|f| f.to_string()).unwrap_or_else(|| "none".into());
                println!("{f:>14} {:>10} {:>12.8}", r.steps, r.fidelity);
            }
            eprintln!("wrote {}", out.join("cdd_bench.csv").display());
            Ok(exit::SUCCESS)
        }
        Command::Optimize { method, gate, axes, out, no_plots } => {
            let method = parse_method(&method)?;
            let target = parse_gate(&gate)?;
            let dist = parse_axes(&axes)?;
            let out = out_or_default(out);
            let report = cmd_optimize(&config, method, &target, &dist, &out, !no_plots)?;
            println!(
                "{} {} {}: energy {:.6} ħ²/τ, infidelity {:.3e}, {} iterations, converged {}",
                report.method, report.gate, report.axes, report.energy, report.infidelity, report.iterations, report.converged
            );
            eprintln!("wrote {}", out.display());
            Ok(if report.converged { exit::SUCCESS } else { exit::NOT_CONVERGED })
        }
        Command::Verify { controls, gate, out } => {
            let target = parse_gate(&gate)?;
            let trajectory = read_controls_csv(&controls)?;
            let report = verify_controls(&config, &trajectory, &target)?;
            println!("drift-model fidelity {:.10}", report.drift_model_fidelity);
            println!("{:>14} {:>10} {:>14} {:>14}", "omega/2pi GHz", "steps", "full stack F", "CDD only F");
            for r in &report.rows {
                println!(
                    "{:>14} {:>10} {:>14.10} {:>14.10}",
                    r.frequency_ghz, r.steps, r.full_stack_fidelity, r.cdd_only_fidelity
                );
            }
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_json(&dir.join("verify.json"), &report)?;
            }
            Ok(exit::SUCCESS)
        }
        Command::Table1 { out } => {
            let out = out_or_default(out);
            let cells = cmd_table1(&config, &out)?;
            println!("{}", TABLE1_HEADER.join(","));
            for row in geogate_cli::commands::table_rows(&cells) {
                println!("{}", row.join(","));
            }
            for c in cells.iter().filter(|c| c.outcome.is_err()) {
                eprintln!("{} {} {}: {}", c.gate, c.axes, c.method, c.outcome.as_ref().unwrap_err());
            }
            Ok(if cells.iter().all(|c| c.converged()) { exit::SUCCESS } else { exit::NOT_CONVERGED })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { exit::SUCCESS as u8 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Config(_)) {
                eprintln!("(config file: --config, or ${CONFIG_ENV})");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
