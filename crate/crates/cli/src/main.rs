use anyhow::Result;
use clap::{Parser, Subcommand};
use desklab_cli::commands;
use desklab_cli::config::load_config;
use desklab_cli::resolve_workspace_root;
use desklab_core::workspace::Workspace;
use std::path::PathBuf;

/// Desk-scale pre-training laboratory: fixed token budgets, certified
/// hyperparameter searches, logit-averaged ensembles, scaling-law
/// asymptotes, and distillation, all cached in an append-only ledger.
#[derive(Parser)]
#[command(name = "desklab", version, about)]
struct Cli {
    /// Workspace root (falls back to $DESKLAB_WORKSPACE).
    #[arg(short, long, global = true)]
    workspace: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a workspace from a text source or a generated sample corpus.
    Init {
        /// UTF-8 text file to ingest.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Generate a deterministic sample corpus with this many train tokens.
        #[arg(long)]
        sample_tokens: Option<u64>,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long, default_value_t = 64)]
        context_len: usize,
        #[arg(long, default_value_t = 64)]
        val_windows: usize,
        /// Plain byte vocabulary without a BOS start token.
        #[arg(long)]
        no_bos: bool,
    },
    /// Execute the [[run]] sections of a config (single runs and sweeps).
    Run { config: PathBuf },
    /// Coordinate-descent hyperparameter search ([search] section).
    Search { config: PathBuf },
    /// Full recipe pipelines ([recipe] section).
    Recipe { config: PathBuf },
    /// Evaluate or build logit-averaged ensembles ([ensemble] section).
    Ensemble { config: PathBuf },
    /// Sequence-level distillation ([distill] section).
    Distill { config: PathBuf },
    /// Fit power laws to CSV points ([fit] section).
    Fit { config: PathBuf },
    /// Render fit documents into CSV tables and SVG plots.
    Report {
        /// Fit documents (fits/*.json) to render.
        fits: Vec<PathBuf>,
        /// Baseline law for data-efficiency ratios.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        out: String,
    },
    /// Seed-variance study with per-mode ensemble comparison ([variance]).
    Variance { config: PathBuf },
    /// Verify that every reported number traces to a ledger line.
    Audit,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Init {
            source,
            sample_tokens,
            sample_seed,
            context_len,
            val_windows,
            no_bos,
        } => {
            let root = resolve_workspace_root(cli.workspace)?;
            commands::init::cmd_init(
                &root,
                source,
                sample_tokens,
                sample_seed,
                context_len,
                val_windows,
                no_bos,
            )
        }
        Command::Run { config } => {
            let mut ws = open(cli.workspace)?;
            commands::run::cmd_run(&mut ws, &load_config(&config)?)?;
            Ok(())
        }
        Command::Search { config } => {
            let mut ws = open(cli.workspace)?;
            commands::search::cmd_search(&mut ws, &load_config(&config)?)?;
            Ok(())
        }
        Command::Recipe { config } => {
            let mut ws = open(cli.workspace)?;
            commands::recipe::cmd_recipe(&mut ws, &load_config(&config)?)?;
            Ok(())
        }
        Command::Ensemble { config } => {
            let mut ws = open(cli.workspace)?;
            commands::ensemble::cmd_ensemble(&mut ws, &load_config(&config)?)?;
            Ok(())
        }
        Command::Distill { config } => {
            let mut ws = open(cli.workspace)?;
            commands::distill::cmd_distill(&mut ws, &load_config(&config)?)?;
            Ok(())
        }
        Command::Fit { config } => {
            let ws = open(cli.workspace)?;
            let dir = config.parent().unwrap_or(std::path::Path::new(".")).to_path_buf();
            commands::fit::cmd_fit(&ws, &load_config(&config)?, &dir)?;
            Ok(())
        }
        Command::Report { fits, baseline, out } => {
            let ws = open(cli.workspace)?;
            commands::report::cmd_report(&ws, &fits, baseline.as_deref(), &out)?;
            Ok(())
        }
        Command::Variance { config } => {
            let mut ws = open(cli.workspace)?;
            commands::variance::cmd_variance(&mut ws, &load_config(&config)?)?;
            Ok(())
        }
        Command::Audit => {
            let ws = open(cli.workspace)?;
            commands::audit::cmd_audit(&ws)?;
            Ok(())
        }
    }
}

fn open(flag: Option<PathBuf>) -> Result<Workspace> {
    let root = resolve_workspace_root(flag)?;
    Ok(Workspace::open(&root)?)
}
