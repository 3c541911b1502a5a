//! Command-line driver: every pipeline stage as a verb, one TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use recexplain::config::load_config;
use recexplain::evaluation::SweepParameter;
use recexplain::pipeline::Pipeline;
use recexplain::recommender::BlackBox;
use recexplain::Result;

#[derive(Parser)]
#[command(
    name = "recexplain",
    version,
    about = "Personalized causal explanations for black-box sequential recommenders"
)]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(short, long, default_value = "config.toml")]
    config: PathBuf,

    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Override the worker thread count (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, filter, and chronologically split the dataset.
    Prepare,
    /// Train the item/user embeddings used by the perturbation model.
    TrainEmbeddings,
    /// Train (or load) the black-box recommender under explanation.
    TrainBlackbox,
    /// Train the history VAE on the test-input sequences.
    TrainVae,
    /// Perturb, fit causal dependencies, select, and verify per user.
    Explain,
    /// Everything through the final report (metrics + association baseline).
    Evaluate,
    /// Parameter study over the cached pair sets.
    Sweep {
        #[arg(value_enum)]
        parameter: SweepArg,
        /// Comma-separated grid overriding the config's sweep values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Option<Vec<f64>>,
    },
    /// Alias for the full pipeline: prepare through evaluate.
    RunAll,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepArg {
    Gamma,
    M,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out_dir) = cli.out_dir {
        config.out_dir = out_dir;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    let pipeline = Pipeline::new(config)?;

    match cli.command {
        Command::Prepare => {
            let split = pipeline.prepare()?;
            println!(
                "prepared: {} retained users, {} dropped, {} items, n={}",
                split.retained_users(),
                split.dropped_users.len(),
                split.n_items,
                split.n
            );
        }
        Command::TrainEmbeddings => {
            let table = pipeline.train_embeddings()?;
            println!(
                "embeddings ready: {} items x {} dims",
                table.n_items(),
                table.dim
            );
        }
        Command::TrainBlackbox => {
            let blackbox = pipeline.train_blackbox()?;
            println!("black box ready: {}", blackbox.name());
        }
        Command::TrainVae => {
            let vae = pipeline.train_vae()?;
            println!(
                "vae ready: {} positions x {} dims -> latent {}",
                vae.n, vae.embed_dim, vae.latent_dim
            );
        }
        Command::Explain => {
            let outcomes = pipeline.explain()?;
            let explained = outcomes.iter().filter(|o| o.explanation.is_some()).count();
            println!("explained {} of {} users", explained, outcomes.len());
        }
        Command::Evaluate | Command::RunAll => {
            let report = pipeline.evaluate()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep { parameter, values } => {
            let parameter = match parameter {
                SweepArg::Gamma => SweepParameter::Gamma,
                SweepArg::M => SweepParameter::M,
            };
            let grid = values.unwrap_or_else(|| match parameter {
                SweepParameter::Gamma => pipeline.config.sweep.gamma_values.clone(),
                SweepParameter::M => pipeline.config.sweep.m_values.clone(),
            });
            let rows = pipeline.run_sweep(parameter, &grid)?;
            println!("value\tfidelity\tverified_percentage");
            for row in rows {
                println!(
                    "{}\t{}\t{}",
                    row.value, row.fidelity, row.verified_percentage
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
