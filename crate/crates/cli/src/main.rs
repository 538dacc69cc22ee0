use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use genrec_cli::commands::{self, PrepareArgs, SynthArgs};
use genrec_cli::config::Config;
use genrec_cli::error::CliResult;

#[derive(Parser)]
#[command(name = "genrec", about = "Sequential recommendation experiments", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic interaction log as canonical CSV.
    Synth {
        /// markov_items, time_gap_dependent or logistic_ranking
        #[arg(long)]
        rule: String,
        #[arg(long, default_value_t = 1000)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        min_len: usize,
        #[arg(long, default_value_t = 50)]
        max_len: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Behavior mix, e.g. `pv:0.7,buy:0.3`.
        #[arg(long)]
        behaviors: Option<String>,
        #[arg(long, default_value_t = 1)]
        domains: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-item ground truth as `item_id,prob`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Ingest a raw log and write a prepared sequence cache.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        /// canonical_csv or movielens_dat
        #[arg(long)]
        format: String,
        #[arg(long, default_value_t = 50)]
        max_len: usize,
        /// recall or ranking
        #[arg(long, default_value = "recall")]
        task: String,
        /// Cache file, or a directory that receives `prepared.bin`.
        #[arg(long)]
        out: PathBuf,
        /// Item attribute file.
        #[arg(long)]
        attrs: Option<PathBuf>,
        /// Apply 5-core filtering to users and items.
        #[arg(long)]
        five_core: bool,
        #[arg(long, default_value_t = 3)]
        min_events: usize,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the held-out targets.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report CSV to append rows to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every grid point and seed, appending to a report CSV.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise report CSVs.
    Report {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        /// Exported embedding files to summarise.
        #[arg(long)]
        embeddings: Vec<PathBuf>,
        /// Published dataset to show next to each best point.
        #[arg(long)]
        reference: Option<String>,
    },
    /// Write final hidden states of a sample of users.
    ExportEmbeddings {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        sample: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Cmd, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Cmd::Synth {
            rule,
            users,
            items,
            seed,
            min_len,
            max_len,
            noise,
            behaviors,
            domains,
            out: dest,
            truth,
        } => commands::synth(
            &SynthArgs {
                rule,
                users,
                items,
                seed,
                min_len,
                max_len,
                noise,
                behaviors,
                domains,
                out: dest,
                truth,
            },
            out,
        ),
        Cmd::Prepare {
            input,
            format,
            max_len,
            task,
            out: dest,
            attrs,
            five_core,
            min_events,
        } => commands::prepare(
            &PrepareArgs {
                input,
                format,
                max_len,
                task,
                out: dest,
                attrs,
                five_core,
                min_events,
            },
            out,
        )
        .map(|_| ()),
        Cmd::Train { cfg, out: dest } => commands::train(&cfg.load()?, &dest, out),
        Cmd::Evaluate { cfg, checkpoint, out: dest } => {
            commands::evaluate(&cfg.load()?, &checkpoint, dest.as_deref(), out)
        }
        Cmd::Sweep { cfg, out: dest } => commands::run_sweep(&cfg.load()?, &dest, out),
        Cmd::Report {
            csvs,
            embeddings,
            reference,
        } => commands::report(&csvs, &embeddings, reference, out),
        Cmd::ExportEmbeddings {
            cfg,
            checkpoint,
            sample,
            seed,
            out: dest,
        } => commands::export_embeddings(&cfg.load()?, &checkpoint, sample, seed, Path::new(&dest), out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(cli.cmd, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
