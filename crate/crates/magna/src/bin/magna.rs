use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use magna::config::{Overrides, RunConfig, TaskKind};
use magna::run;
use serde_json::Value;

/// Graph attention networks with attention diffusion.
#[derive(Parser)]
#[command(name = "magna", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a node classifier.
    TrainNode(TrainArgs),
    /// Train MAGNA + DistMult on a knowledge graph.
    TrainKg(TrainArgs),
    /// Filtered ranking metrics of a knowledge-graph checkpoint.
    EvalKg {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reject evaluation triples naming entities unseen in training.
        #[arg(long)]
        strict: bool,
    },
    /// Random hyperparameter search.
    Search {
        #[arg(long)]
        data: PathBuf,
        /// JSON search space.
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
        /// Base run configuration (the task is read from it, default node).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Trials trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Spectral and attention diagnostics.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Train the full model and ablated variants with one seed.
    Ablate {
        #[command(flatten)]
        run: TrainArgs,
        /// Comma-separated subset of no_diffusion,no_layernorm,no_feedforward.
        #[arg(long, value_delimiter = ',', required = true)]
        flags: Vec<String>,
    },
}

#[derive(Subcommand)]
enum Analyze {
    /// Eigenvalues of the uniform attention of an edge list and of its
    /// diffusion.
    Spectrum {
        /// Edge list in the edges.tsv format.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attention discrepancy of one block and head (0-based).
    Discrepancy {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        head: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(task: Option<TaskKind>, args: &TrainArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(p) => {
            serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    let ov = Overrides {
        task,
        data: Some(args.data.clone()),
        out: Some(args.out.clone()),
        seed: args.seed,
    };
    Ok(RunConfig::resolve(file, &ov)?)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainNode(a) => print_json(&run::train(&run_config(Some(TaskKind::Node), &a)?)?.metrics),
        Command::TrainKg(a) => print_json(&run::train(&run_config(Some(TaskKind::Kg), &a)?)?.metrics),
        Command::EvalKg {
            data,
            checkpoint,
            out,
            strict,
        } => {
            let (valid, test) = run::eval_kg(&data, &checkpoint, &out, strict)?;
            print_json(&serde_json::json!({ "valid": valid, "test": test }))
        }
        Command::Search {
            data,
            space,
            trials,
            out,
            config,
            seed,
            jobs,
        } => {
            let base = run_config(
                None,
                &TrainArgs {
                    data,
                    config,
                    out: out.clone(),
                    seed,
                },
            )?;
            let space = run::read_space(&space)?;
            let rows = run::search(&base, &space, trials, jobs, &out)?;
            if let Some(best) = rows.first() {
                println!(
                    "best trial {} val_metric {}",
                    best.result.trial.index, best.result.val_metric
                );
            }
            Ok(())
        }
        Command::Analyze(Analyze::Spectrum {
            graph,
            alpha,
            out,
            seed,
        }) => {
            let r = run::analyze_spectrum(&graph, alpha, &out, seed)?;
            println!(
                "{} eigenvalues, max |lambda_hat error| {:e}, max |ratio error| {:e}",
                r.rows.len(),
                r.max_lambda_hat_error,
                r.max_ratio_error
            );
            Ok(())
        }
        Command::Analyze(Analyze::Discrepancy {
            data,
            checkpoint,
            layer,
            head,
            out,
        }) => {
            let r = run::analyze_discrepancy(&data, &checkpoint, layer, head, &out)?;
            println!("mean discrepancy {}", r.mean);
            Ok(())
        }
        Command::Ablate { run: a, flags } => {
            let cfg = run_config(None, &a)?;
            for v in run::ablate(&cfg, &flags, &a.out)? {
                let tag = if v.gat_equivalent { " (GAT)" } else { "" };
                println!(
                    "{}{tag}: val {} test {:?}",
                    v.label, v.metrics.val_metric, v.metrics.test_metric
                );
            }
            Ok(())
        }
    }
}
