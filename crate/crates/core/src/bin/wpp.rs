//! `wpp` command line tool.
//!
//! `wpp <command> [--config FILE] [key=value ...]`; overrides win over the
//! file. On success prints `ok command=<cmd> ...` and exits 0; on failure
//! prints one `error command=<cmd> kind=<kind> message="..."` line to
//! stderr and exits 2.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wpp_core::config::RunConfig;
use wpp_core::pipeline::{gen_data, run_estimate, run_eval, run_reconstruct, run_train, run_w2, RunSummary};
use wpp_core::Result;

#[derive(Parser)]
#[command(name = "wpp", about = "Wasserstein patch prior superresolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Params {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value overrides.
    pairs: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a low-resolution training set and a validation pair.
    GenData(Params),
    /// Estimate blur kernel and bias from a registered image pair.
    EstimateOp(Params),
    /// Variational WPP reconstruction of one image.
    Reconstruct(Params),
    /// Train the residual network on the batched WPP loss.
    Train(Params),
    /// PSNR and blur effect against a ground truth.
    Eval(Params),
    /// W2² between the patch distributions of two images.
    W2(Params),
}

fn load(p: &Params) -> Result<RunConfig> {
    let mut cfg = match &p.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(),
    };
    cfg.apply_overrides(&p.pairs)?;
    Ok(cfg)
}

fn run(cmd: &Command) -> Result<RunSummary> {
    match cmd {
        Command::GenData(p) => gen_data(&load(p)?),
        Command::EstimateOp(p) => run_estimate(&load(p)?),
        Command::Reconstruct(p) => run_reconstruct(&load(p)?),
        Command::Train(p) => run_train(&load(p)?),
        Command::Eval(p) => run_eval(&load(p)?),
        Command::W2(p) => run_w2(&load(p)?),
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenData(_) => "gen-data",
        Command::EstimateOp(_) => "estimate-op",
        Command::Reconstruct(_) => "reconstruct",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::W2(_) => "w2",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = name(&cli.command);
    match run(&cli.command) {
        Ok(summary) => {
            let mut line = format!("ok command={cmd}");
            for (k, v) in &summary.values {
                line.push_str(&format!(" {k}={v}"));
            }
            if !summary.manifest_path.as_os_str().is_empty() {
                line.push_str(&format!(" manifest={}", summary.manifest_path.display()));
            }
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ").replace('"', "'");
            eprintln!("error command={cmd} kind={} message=\"{msg}\"", e.kind());
            ExitCode::from(2)
        }
    }
}
