mod cli;
mod config;
mod manifest;
mod stages;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use cli::{Cli, Stage};
use config::FileConfig;
use manifest::Manifest;
use stages::{Ctx, UsageError, DEFAULT_SEED};

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let manifest = match &cli.manifest {
        Some(path) => Some((path.clone(), Manifest::load(path)?)),
        None => None,
    };
    let mut ctx = Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
        cfg,
        manifest,
    };
    match &cli.stage {
        Stage::BuildVocab(a) => stages::build_vocab(&mut ctx, a),
        Stage::AlignStats(a) => stages::align_stats(&mut ctx, a),
        Stage::Pair(a) => stages::pair(&mut ctx, a),
        Stage::Layout(a) => stages::layout(&mut ctx, a),
        Stage::Init(a) => stages::init(&mut ctx, a),
        Stage::Export(a) => stages::export(&mut ctx, a),
        Stage::TrainToy(a) => stages::train_toy(&mut ctx, a),
        Stage::GradCheck(a) => stages::grad_check(&mut ctx, a),
        Stage::Pca(a) => stages::pca(&mut ctx, a),
        Stage::Report(a) => stages::report(&ctx, a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let stage = cli.stage.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spbwe {stage}: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
