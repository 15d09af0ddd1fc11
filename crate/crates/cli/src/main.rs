use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use log::info;

use arbocast_core::config::{RunConfig, SEED_ENV};
use arbocast_core::data::Disease;
use arbocast_core::nn::Architecture;
use arbocast_core::par::{self, Exec};
use arbocast_core::pipeline::{run_stage, Stage};
use arbocast_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Ingest,
    Label,
    Tune,
    Train,
    Evaluate,
    Forecast,
    Synth,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Stage {
        match c {
            Command::Ingest => Stage::Ingest,
            Command::Label => Stage::Label,
            Command::Tune => Stage::Tune,
            Command::Train => Stage::Train,
            Command::Evaluate => Stage::Evaluate,
            Command::Forecast => Stage::Forecast,
            Command::Synth => Stage::Synth,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchArg {
    Simple,
    Bidi,
}

/// Arboviral outbreak classification and case forecasting.
#[derive(Debug, Parser)]
#[command(name = "arbocast", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config file and the ARBOCAST_SEED variable.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["60", "90", "120"])]
    window: Option<String>,
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run once per disease, each in its own subdirectory of --out.
    #[arg(long)]
    all: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("ERROR:{code}: {msg}");
    ExitCode::from(code)
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(w) = &cli.window {
        cfg.set("window", w)?;
    }
    if let Some(a) = cli.arch {
        cfg.arch = match a {
            ArchArg::Simple => Architecture::Simple,
            ArchArg::Bidi => Architecture::Bidirectional,
        };
        cfg.search.n_layers = cfg.arch.lstm_layers();
    }
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    } else if cfg.seed.is_none() {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let s = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an integer seed")))?;
            cfg.seed = Some(s);
        }
    }
    if cli.jobs == Some(1) {
        cfg.exec = Exec::Sequential;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let stage = Stage::from(cli.command);
    let runs: Vec<(RunConfig, PathBuf)> = if cli.all {
        Disease::ALL
            .iter()
            .map(|&d| {
                let mut c = cfg.clone();
                c.disease = d;
                (c, cli.out.join(d.as_str()))
            })
            .collect()
    } else {
        vec![(cfg.clone(), cli.out.clone())]
    };
    for (c, out) in &runs {
        info!("{:?} for {} into {}", stage, c.disease, out.display());
        for path in run_stage(stage, c, out)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(EXIT_USAGE, e.to_string().trim_start_matches("error: ").trim_end()),
    };
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => return fail(exit_code(&e), e),
    };
    let result = match cli.jobs {
        Some(j) if j > 1 => par::with_jobs(j, || run(&cli, &cfg)),
        _ => run(&cli, &cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(exit_code(&e), e),
    }
}
