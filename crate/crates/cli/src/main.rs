use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vrgc_cli::commands;
use vrgc_cli::RunConfig;

#[derive(Parser)]
#[command(name = "vrgc", version, about = "Recurrent graph classification over BFS adjacency sequences")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print dataset statistics.
    Stats(RunArgs),
    /// Stratified k-fold cross-validation.
    Crossval {
        #[command(flatten)]
        run: RunArgs,
        /// Only run these folds (comma separated).
        #[arg(long, value_delimiter = ',')]
        only_folds: Vec<usize>,
    },
    /// Train a single fold and evaluate it.
    TrainFold {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        fold: usize,
    },
    /// Evaluate a checkpoint with root voting.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test fold to evaluate; all graphs when omitted.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long, default_value = "votes.csv")]
        output: PathBuf,
    },
    /// Classifier latents for several roots of selected graphs, with 2-D PCA scores.
    DumpLatents {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        graphs: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        roots: usize,
        #[arg(long, default_value = "latents.tsv")]
        output: PathBuf,
    },
    /// Input and VAR-predicted adjacency rows for two roots of one graph.
    DumpRecon {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: usize,
        /// Decode from the latent mean instead of a sample.
        #[arg(long)]
        latent_mean: bool,
        #[arg(long, default_value = "recon.txt")]
        output: PathBuf,
    },
}

/// Flags override the config file, which overrides the defaults.
#[derive(Args)]
struct RunArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    d_n: Option<usize>,
    /// Disable the variational auto-regression term.
    #[arg(long)]
    no_var: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    milestones: Option<String>,
    #[arg(long)]
    lr_factor: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Roots per soft vote.
    #[arg(long)]
    votes_n: Option<usize>,
    /// Soft votes per graph.
    #[arg(long)]
    votes_k: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    decoder_hidden: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            c.apply_text(&text).with_context(|| path.display().to_string())?;
        }
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| c.set(k, &v).map_err(anyhow::Error::msg));
        set("dataset", self.dataset.clone())?;
        set("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()))?;
        set("d_n", self.d_n.map(|v| v.to_string()))?;
        set("variational", self.no_var.then(|| "false".to_string()))?;
        set("alpha", self.alpha.map(|v| v.to_string()))?;
        set("iterations", self.iterations.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("lr", self.lr.map(|v| v.to_string()))?;
        set("milestones", self.milestones.clone())?;
        set("lr_factor", self.lr_factor.map(|v| v.to_string()))?;
        set("clip_norm", self.clip_norm.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("votes_n", self.votes_n.map(|v| v.to_string()))?;
        set("votes_k", self.votes_k.map(|v| v.to_string()))?;
        set("folds", self.folds.map(|v| v.to_string()))?;
        set("jobs", self.jobs.map(|v| v.to_string()))?;
        set("subsample", self.subsample.map(|v| v.to_string()))?;
        set("decoder_hidden", self.decoder_hidden.map(|v| v.to_string()))?;
        set("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Stats(run) => {
            let cfg = run.resolve()?;
            print!("{}", commands::stats_table(&commands::load_dataset(&cfg)?));
        }
        Cmd::Crossval { run, only_folds } => {
            let cfg = run.resolve()?;
            let s = commands::crossval(&cfg, &only_folds, run.quiet)?;
            for f in &s.folds {
                println!("fold {:>2}: accuracy {:.4}", f.fold, f.accuracy);
            }
            println!(
                "{} {}: {:.4} ± {:.4} (majority baseline {:.4})",
                s.dataset,
                if cfg.variational { "VRGC" } else { "RGC" },
                s.mean,
                s.std,
                s.majority_baseline
            );
            println!("summary: {}", cfg.out.join("summary.json").display());
        }
        Cmd::TrainFold { run, fold } => {
            let cfg = run.resolve()?;
            let acc = commands::train_one_fold(&cfg, fold, run.quiet)?;
            println!("fold {fold}: accuracy {acc:.4}");
        }
        Cmd::Eval { run, checkpoint, fold, output } => {
            let cfg = run.resolve()?;
            let acc = commands::eval_checkpoint(&cfg, &checkpoint, fold, &output)?;
            println!("accuracy {acc:.4}");
        }
        Cmd::DumpLatents { run, checkpoint, graphs, roots, output } => {
            let cfg = run.resolve()?;
            let n = commands::dump_latents(&cfg, &checkpoint, &graphs, roots, &output)?;
            println!("{n} rows written to {}", output.display());
        }
        Cmd::DumpRecon { run, checkpoint, graph, latent_mean, output } => {
            let cfg = run.resolve()?;
            commands::dump_recon(&cfg, &checkpoint, graph, latent_mean, &output)?;
            println!("written to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
