use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use erosion_lab::{compare, run, CliError, ConfigSource, RunRequest, PRESETS};

#[derive(Parser)]
#[command(name = "erosion-lab", version, about = "Capability erosion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a config file.
    Run {
        /// Bundled preset name (see `erosion-lab presets`).
        #[arg(required_unless_present = "config", conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of seeds (instances for geometry runs).
        #[arg(long)]
        seeds: Option<usize>,
        /// Largest sampled dimension for geometry runs.
        #[arg(long)]
        dim_max: Option<usize>,
        /// Output directory; defaults to $EROSION_LAB_OUT/<name> or runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads across seeds.
        #[arg(long)]
        jobs: Option<usize>,
        /// Config override `dotted.key=value`; value is JSON or a bare string.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Paired per-seed comparison of two finished runs (deltas are B − A).
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List bundled presets.
    Presets,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            preset,
            config,
            seed,
            seeds,
            dim_max,
            out,
            jobs,
            set,
        } => {
            let source = match (preset, config) {
                (_, Some(path)) => ConfigSource::File(path),
                (Some(name), None) => ConfigSource::Preset(name),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let outcome = run(&RunRequest {
                source,
                seed,
                seeds,
                dim_max,
                out,
                jobs,
                overrides: set,
            })?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            eprintln!("wrote {}", outcome.dir.display());
        }
        Command::Compare { dir_a, dir_b, out } => {
            let c = compare(&dir_a, &dir_b, &out)?;
            println!("{}", serde_json::to_string_pretty(&c.summary)?);
            eprintln!("wrote {}", c.dir.display());
        }
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(())
}
