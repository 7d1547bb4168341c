use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mgcosim::scenario::{self, output, ScenarioFile};

#[derive(Parser)]
#[command(name = "mgcosim", version, about = "Microgrid secondary-control co-simulation")]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=mgcosim::rng::MAX_SEED))]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace, metrics and latency dump.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        file: String,
        /// Output directory.
        #[arg(long, env = "MGCOSIM_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Also render SVG charts.
        #[arg(long)]
        charts: bool,
    },
    /// Run scenarios that differ only in their network and tabulate them.
    Compare {
        #[arg(required = true)]
        files: Vec<String>,
        /// Also write the table as JSON into this directory.
        #[arg(long, env = "MGCOSIM_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Run a Kp × Ki grid around a base scenario.
    Sweep {
        file: String,
        #[arg(long, value_delimiter = ',', required = true)]
        kp: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        ki: Vec<f64>,
        #[arg(long, env = "MGCOSIM_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario without running it.
    Validate { file: String },
}

fn load(spec: &str, seed: Option<u64>) -> Result<ScenarioFile> {
    let mut s = scenario::load(spec)?;
    if let Some(seed) = seed {
        s.metadata.seed = seed;
    }
    Ok(s)
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { file, out, charts } => {
            let s = load(&file, cli.seed)?;
            let result = scenario::run(&s)?;
            let written = scenario::emit_outputs(&result, &out, charts)?;
            let m = &result.metrics;
            println!(
                "{}: {} (settling {} s, steady-state error {:.3e} Hz)",
                m.scenario,
                m.verdict.as_str(),
                m.settling_time_s.map_or("-".into(), |t| format!("{t:.3}")),
                m.steady_state_error_hz
            );
            if let Some(f) = &m.failure {
                println!("{f}");
            }
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(m.verdict.exit_code() as u8)
        }
        Command::Compare { files, out } => {
            let scenarios = files.iter().map(|f| load(f, cli.seed)).collect::<Result<Vec<_>>>()?;
            let report = scenario::compare(&scenarios)?;
            print!("{}", report.table());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let json = serde_json::to_string_pretty(&report)? + "\n";
                output::write_atomic(&dir.join("compare.json"), json.as_bytes())?;
            }
            Ok(0)
        }
        Command::Sweep { file, kp, ki, out } => {
            let s = load(&file, cli.seed)?;
            let report = scenario::gain_sweep(&s, &kp, &ki)?;
            print!("{}", report.table());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let json = serde_json::to_string_pretty(&report)? + "\n";
                output::write_atomic(&dir.join("sweep.json"), json.as_bytes())?;
            }
            Ok(0)
        }
        Command::Validate { file } => {
            let s = load(&file, cli.seed).context("validation failed")?;
            println!(
                "{}: ok ({} DGs, {} loads, {} links, {} mode)",
                s.metadata.name,
                s.plant.dg.len(),
                s.plant.load.len(),
                s.network.link.len(),
                s.control.mode
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Exit code 2 means "oscillating", so usage errors must not use clap's default.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
