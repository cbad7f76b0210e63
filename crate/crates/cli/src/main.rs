use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use oodgate_cli::pipeline::{read_config, run_all};
use oodgate_cli::{serve, CliError, Run};

#[derive(Parser)]
#[command(name = "oodgate", version, about = "OOD-gated defense against model extraction")]
struct Cli {
    /// JSON run config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the run's artifacts.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Print the fully defaulted config and exit.
    #[arg(long, global = true)]
    print_effective_config: bool,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the ID train/test split.
    GenData,
    TrainVictim,
    /// Train the auxiliary network whose penultimate layer embeds queries.
    TrainExtractor,
    /// Fit per-class Gaussians on embeddings (needs the extractor).
    FitOod,
    /// Set the distance threshold at the configured percentile.
    Calibrate,
    /// One attack against the defended victim.
    Attack,
    /// p-sweep over every configured attacker and seed.
    Sweep,
    /// Markdown summary of the last sweep.
    Report,
    /// Serve the defended victim over HTTP.
    Serve,
    /// gen-data through sweep, then report.
    Pipeline,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = read_config(cli.config.as_deref())?;
    if cli.print_effective_config {
        config.validate()?;
        print!("{}", config.to_json());
        return Ok(());
    }
    let Some(cmd) = cli.cmd else {
        return Err(CliError::ConfigInvalid(vec!["no subcommand given".into()]));
    };
    let run = Run::new(&cli.run_dir, config)?;
    match cmd {
        Cmd::GenData => run.gen_data(),
        Cmd::TrainVictim => run.train_victim(),
        Cmd::TrainExtractor => run.train_extractor(),
        Cmd::FitOod => run.fit_ood(),
        Cmd::Calibrate => run.calibrate(),
        Cmd::Attack => run.attack(),
        Cmd::Sweep => run.sweep().map(|_| ()),
        Cmd::Report => run.report().map(|text| print!("{text}")),
        Cmd::Pipeline => {
            run_all(&run)?;
            run.report().map(|text| print!("{text}"))
        }
        Cmd::Serve => {
            let gate = Arc::new(run.gate(run.config.defense.clone())?);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(serve::run(gate, &run.config.serve))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} msg={:?}", e.kind(), e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
