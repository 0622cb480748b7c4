mod args;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use commands::Ctx;
use manifest::{manifest_path, RunManifest, TOOL_VERSION};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global()?;
    }
    let ctx = Ctx { seed: cli.seed, out_dir: cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(".")) };
    let start = Instant::now();
    let outcome = commands::run(&cli.command, &ctx)?;
    let manifest = RunManifest {
        subcommand: cli.command.name(),
        params: serde_json::to_value(&cli.command)?,
        seed: cli.seed,
        tool_version: TOOL_VERSION,
        outputs: outcome.outputs,
        summary: outcome.summary,
        duration_s: start.elapsed().as_secs_f64(),
    };
    manifest.write(&manifest_path(&outcome.primary, outcome.primary_is_dir))?;
    Ok(())
}
