use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use wigig_cli::{execute_run, execute_sweep, parse_config, replay_check, Cli, Command, CommandKind, SpecArgs};
use wigig_core::checkpoint::Checkpoint;

fn resolve(kind: CommandKind, args: &SpecArgs) -> Result<wigig_cli::ExperimentSpec> {
    let spec = parse_config(kind, args.config.as_deref(), args)?;
    print!("{}", spec.to_toml());
    println!();
    Ok(spec)
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let spec = resolve(CommandKind::Run, &args)?;
            println!("{}", execute_run(&spec)?);
        }
        Command::Sweep(args) => {
            let spec = resolve(CommandKind::Sweep, &args)?;
            eprintln!("running {} cells", spec.cell_count());
            for line in execute_sweep(&spec)? {
                println!("{line}");
            }
        }
        Command::ReplayCheck { dir } => {
            let scratch = tempfile::tempdir().context("creating scratch directory")?;
            let problems = replay_check(&dir, scratch.path())?;
            if !problems.is_empty() {
                for p in &problems {
                    eprintln!("mismatch: {p}");
                }
                eprintln!("replay of {} does not reproduce its outputs", dir.display());
                return Ok(ExitCode::FAILURE);
            }
            println!("replay of {} reproduces all outputs", dir.display());
        }
        Command::InspectModel { path } => {
            let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
            print!("{}", ck.summary());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
