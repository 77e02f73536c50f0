use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use modpool::harness::{
    cmd_eval, cmd_export_embeddings, cmd_export_selection_coords, cmd_resume, cmd_search_report, cmd_train,
    write_atomic, ExperimentConfig, RunSummary, BEST_CHECKPOINT,
};
use modpool::tasks::Split;

#[derive(Parser)]
#[command(name = "modpool", version, about = "Multi-task sequence models with controller-selected shared modules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an experiment from a config file.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with_all = ["config", "seed"])]
        resume: Option<PathBuf>,
    },
    /// Evaluate every task of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Write the CSV here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy module sequences, per-step probabilities and shared prefixes.
    SearchReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Task embeddings as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy module indices per task as CSV coordinates.
    ExportSelectionCoords {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

fn print_summary(summary: &RunSummary) {
    println!("{:<6} {:<12} {:<16} {:>10} {:>10}", "task", "name", "modules", "dev", "test");
    for t in &summary.tasks {
        let modules = if t.actions.is_empty() {
            "-".to_string()
        } else {
            t.actions.iter().map(usize::to_string).collect::<Vec<_>>().join(">")
        };
        println!(
            "{:<6} {:<12} {:<16} {:>10.4} {:>10.4}",
            t.task_id, t.name, modules, t.dev_after, t.test
        );
    }
    println!(
        "mean test {:.4} after {} epochs (best epoch {}); outputs in {}",
        summary.mean_test,
        summary.epochs,
        summary.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        summary.out_dir.display()
    );
}

fn train(config: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>, resume: Option<PathBuf>) -> Result<()> {
    if let Some(ckpt) = resume {
        let Some(out) = out else { bail!("--resume needs --out") };
        let summary = cmd_resume(&ckpt, &out)?;
        print_summary(&summary);
        return Ok(());
    }
    let Some(path) = config else { bail!("train needs --config or --resume") };
    let mut cfg = ExperimentConfig::from_file(&path)?;
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    let Some(out) = out.or_else(|| cfg.out_dir.clone()) else {
        bail!("no run directory: pass --out or set out_dir in the config")
    };
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let summary = cmd_train(cfg, &base, &out)?;
    print_summary(&summary);
    println!("best checkpoint: {}", out.join(BEST_CHECKPOINT).display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => train(config, seed, out, resume),
        Command::Eval { checkpoint, split, out } => {
            let csv = cmd_eval(&checkpoint, split.into())?;
            match out {
                Some(path) => write_atomic(&path, csv.as_bytes()).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::SearchReport { checkpoint, out } => {
            let report = cmd_search_report(&checkpoint, &out)?;
            for t in &report.tasks {
                println!("{} {}: {:?}", t.task_id, t.name, t.actions);
            }
            Ok(())
        }
        Command::ExportEmbeddings { checkpoint, out } => Ok(cmd_export_embeddings(&checkpoint, &out)?),
        Command::ExportSelectionCoords { checkpoint, out } => Ok(cmd_export_selection_coords(&checkpoint, &out)?),
    }
}
