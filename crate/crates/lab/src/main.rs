use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scoremem_lab::datasets::DatasetSpec;
use scoremem_lab::{run_experiment, ExperimentConfig, ExperimentKind, LabError, Result};

/// Overrides the configured output directory (a command-line flag wins).
const OUTPUT_ENV: &str = "SCOREMEM_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "scoremem", version, about = "Memorization experiments for score-based diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Leave the generation-time comment out of SVG files.
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Write a generated dataset in the text format.
    GenData {
        spec: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// List experiment kinds.
    ListExperiments,
}

fn output_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig, base: &Path) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Some(dir) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    match &cfg.output_dir {
        Some(dir) if dir.is_absolute() => dir.clone(),
        Some(dir) => base.join(dir),
        None => PathBuf::from("output").join(cfg.experiment.name()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output_dir: flag, no_timestamp } => {
            let (mut cfg, text) = ExperimentConfig::load(&config)?;
            if no_timestamp {
                cfg.svg_timestamp = false;
            }
            let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
            let dir = output_dir(flag, &cfg, &base);
            let summary = run_experiment(&cfg, &text, &base, &dir)?;
            println!("{} -> {}", summary.experiment, dir.display());
            for (name, value) in &summary.metrics {
                println!("  {name} = {value}");
            }
            for p in &summary.sweep {
                println!("  {} : mean fraction {:.4} over {} seed(s)", p.label, p.mean, p.fractions.len());
            }
            Ok(())
        }
        Command::GenData { spec, output } => {
            let spec: DatasetSpec = spec.parse()?;
            let data = spec.generate(Path::new("."))?;
            std::fs::write(&output, data.to_text()).map_err(|e| LabError::io(&output, e))?;
            println!("wrote {} points ({spec}) to {}", data.len(), output.display());
            Ok(())
        }
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{:<22} {}", kind.name(), kind.description());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
