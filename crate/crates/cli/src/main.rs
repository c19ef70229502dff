//! `curator`: clean, preselect, evaluate, describe and annotate a
//! short-video corpus.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "curator", version, about = "Short-video corpus curation and evaluation")]
struct Cli {
    /// Layered TOML configuration ([clean], [preselect], [eval], [serve]).
    #[arg(long, global = true, env = "CURATOR_CONFIG")]
    config: Option<PathBuf>,

    /// Override one setting, e.g. `--set clean.ocr_char_threshold=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cleaning stages and write verdicts, a summary and the kept manifest.
    Clean(CleanArgs),
    /// Vote user tags over feature neighbors and sample annotation candidates.
    Preselect(PreselectArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Describe a manifest and, optionally, a ground-truth export.
    Stats(StatsArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Replay an annotation log and write the reviewed ground truth.
    Export(ExportArgs),
}

#[derive(Args)]
pub struct CleanArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Sidecar directory; defaults to the manifest's directory.
    #[arg(long)]
    pub sidecars: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PreselectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub sidecars: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Tagging,
    Retrieval,
    Caption,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Content,
    Beyond,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub task: EvalTask,
    #[arg(long, value_enum, default_value = "content")]
    pub track: Track,
    /// Tagging predictions (JSON lines).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Retrieval similarity matrix (JSON).
    #[arg(long)]
    pub sim: Option<PathBuf>,
    /// Caption hypotheses and references (JSON lines).
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// Ground-truth export.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Manifest supplying titles for the beyond-content caption track.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write the report to this directory as stats.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Candidates from `preselect`; without it the whole manifest is queued.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    std::panic::set_hook(Box::new(|info| eprintln!("error: internal failure: {info}")));
    let run = std::panic::catch_unwind(move || {
        config::Config::resolve(cli.config.as_deref(), &cli.set).and_then(|cfg| match cli.command {
            Command::Clean(a) => commands::clean(&cfg, a),
            Command::Preselect(a) => commands::preselect(cfg, a),
            Command::Eval(a) => commands::eval(&cfg, a),
            Command::Stats(a) => commands::stats(a),
            Command::Serve(a) => commands::serve(&cfg, a),
            Command::Export(a) => commands::export(&cfg, a),
        })
    });
    let Ok(result) = run else {
        return ExitCode::from(1);
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
