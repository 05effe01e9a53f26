use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use baldwin_harness::compare::{compare, RunData};
use baldwin_harness::{run, ExperimentConfig, HarnessError, Preset, RunOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "baldwin-exp",
    version,
    about = "Run and compare evolutionary meta-learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Score genomes one at a time (byte-identical output across machines).
        #[arg(long)]
        sequential: bool,
        /// Suppress progress lines.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Compare finished runs of the same task family.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the aligned table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Inspect the built-in presets.
    Presets {
        #[command(subcommand)]
        action: PresetsAction,
    },
}

#[derive(Subcommand)]
enum PresetsAction {
    List,
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            sequential,
            quiet,
        } => {
            let text = fs::read_to_string(&config).map_err(|e| HarnessError::io(&config, e))?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let opts = RunOptions {
                parallel: !sequential,
                progress: !quiet,
            };
            let summary = run(&cfg, &opts)?;
            let best = summary.best_history.last().copied().unwrap_or(f64::NAN);
            println!(
                "{}: {} generations, {} evaluations, final best {best:.5}, output in {}",
                summary.preset,
                summary.generations,
                summary.evaluations,
                summary.output_dir.display()
            );
            Ok(())
        }
        Command::Compare { dirs, csv } => {
            let runs = dirs
                .iter()
                .map(|d| RunData::load(d))
                .collect::<Result<Vec<_>, _>>()?;
            let cmp = compare(&runs)?;
            print!("{}", cmp.render(&runs));
            if let Some(path) = csv {
                cmp.write_csv(&runs, &path)?;
            }
            Ok(())
        }
        Command::Presets {
            action: PresetsAction::List,
        } => {
            for p in Preset::ALL {
                println!("{:<16} {}", p.name(), p.describe());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
