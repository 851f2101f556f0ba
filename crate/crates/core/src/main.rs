use std::path::PathBuf;
use std::process::ExitCode;

use autohead::cli::{self, RunConfig, RunDir};
use autohead::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "autohead", version, about = "CNN fusion and searched classifier heads for surface-defect detection")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for training and head search.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run directory.
    #[arg(long, global = true, env = "AUTOHEAD_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or index) the datasets and their splits.
    GenData,
    /// Train every configured CNN on every problem.
    TrainCnns,
    /// Evaluate the AUC-weighted fusion of the trained CNNs.
    Fuse,
    /// Search a classifier head on features of the best CNN.
    SearchHead,
    /// Render tables from stored reports.
    Report,
    /// Benchmark single-image inference.
    Bench,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(o) = &cli.out {
        config.out = Some(o.clone());
    }
    config.validate()?;
    Ok(config)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| {
        if text.ends_with('\n') {
            Ok(())
        } else {
            out.write_all(b"\n")
        }
    });
}

fn run(cli: Cli) -> Result<()> {
    let config = effective_config(&cli)?;
    if let Command::ShowConfig = cli.command {
        emit(&config.to_toml()?);
        return Ok(());
    }
    let out = config
        .out
        .clone()
        .ok_or_else(|| Error::Config("no run directory: pass --out, set AUTOHEAD_OUT or `out` in the config".into()))?;
    let dir = RunDir::open(&out)?;
    match cli.command {
        Command::GenData => {
            let names = cli::cmd_gen_data(&config, &dir)?;
            println!("generated {} problem(s) in {}", names.len(), out.display());
        }
        Command::TrainCnns => cli::cmd_train_cnns(&config, &dir)?,
        Command::Fuse => cli::cmd_fuse(&config, &dir)?,
        Command::SearchHead => cli::cmd_search_head(&config, &dir)?,
        Command::Report => {
            cli::cmd_report(dir.root())?;
            let table = dir.root().join("reports/table1.md");
            let text = std::fs::read_to_string(&table).map_err(|e| Error::Io { path: table, source: e })?;
            emit(&text);
        }
        Command::Bench => {
            let b = cli::cmd_bench(&config, &dir)?;
            emit(&serde_json::to_string_pretty(&b).map_err(|e| Error::Format(e.to_string()))?);
        }
        Command::ShowConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(cli::EXIT_USAGE as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", cli::error_line(&e));
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
