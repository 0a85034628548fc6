//! `weakrank`: run the weak-supervision ranking pipeline from a TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use weakrank_core::pipeline::{config_reference, Pipeline, PipelineConfig};
use weakrank_core::synthetic::{planted_benchmark, text_benchmark, PlantedOptions, TextBenchOptions};

#[derive(Debug, Parser)]
#[command(name = "weakrank", version, about = "Weakly supervised passage ranking")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply the labeling functions to the training split.
    Label,
    /// Fuse weak labels by majority vote or the generative label model.
    Aggregate,
    /// Sample training triplets from the aggregated labels.
    Triplets,
    /// Train the ranker on the triplets.
    Train,
    /// Rank the evaluation split with the trained model.
    Rank,
    /// Score the ranking and the pseudo labels against gold.
    Eval,
    /// Run every stage in order.
    Pipeline,
    /// Write a synthetic benchmark and a config for it.
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Text)]
        kind: SynthKind,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train_queries: Option<usize>,
        #[arg(long)]
        test_queries: Option<usize>,
    },
    /// Print the config reference (every key and its default).
    ConfigReference,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Topic-word text with two embedding stores.
    Text,
    /// Four planted noisy score functions over 20 candidates per query.
    Planted,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<weakrank_core::Error>() {
            Some(core) if !core.is_validation() => Failure::Runtime(e),
            Some(_) => Failure::Validation(e),
            None => Failure::Runtime(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Validation(anyhow::anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::ConfigReference => {
            print!("{}", config_reference());
            Ok(())
        }
        Command::Synth {
            kind,
            out,
            train_queries,
            test_queries,
        } => synth(*kind, out, cli.seed.unwrap_or(0), *train_queries, *test_queries),
        stage => {
            let pipeline = load(&cli)?;
            run_stage(&pipeline, stage)
        }
    }
}

fn load(cli: &Cli) -> Result<Pipeline, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Validation(anyhow::anyhow!("--config is required for this command")))?;
    let mut config = PipelineConfig::load(path).map_err(anyhow::Error::from)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        let cwd = std::env::current_dir().context("reading the working directory")?;
        config.output_dir = cwd.join(dir);
    }
    Ok(Pipeline::new(config).map_err(anyhow::Error::from)?)
}

fn run_stage(pipeline: &Pipeline, command: &Command) -> Result<(), Failure> {
    let out = pipeline.out_dir().display().to_string();
    match command {
        Command::Label => {
            let m = pipeline.label().map_err(anyhow::Error::from)?;
            println!("labeled {} pairs with {} functions -> {out}", m.n(), m.k());
        }
        Command::Aggregate => {
            let a = pipeline.aggregate().map_err(anyhow::Error::from)?;
            println!(
                "aggregated {} pairs ({} abstained) -> {out}",
                a.pairs.len(),
                a.abstentions()
            );
        }
        Command::Triplets => {
            let t = pipeline.triplets().map_err(anyhow::Error::from)?;
            println!(
                "sampled {} triplets ({} queries skipped) -> {out}",
                t.triplets.len(),
                t.skipped_queries
            );
        }
        Command::Train => {
            let (_, trace) = pipeline.train().map_err(anyhow::Error::from)?;
            println!(
                "trained {} epochs, final loss {:.6} -> {out}",
                trace.losses.len(),
                trace.last().unwrap_or(f64::NAN)
            );
        }
        Command::Rank => {
            let r = pipeline.rank().map_err(anyhow::Error::from)?;
            println!("ranked {} queries -> {out}", r.len());
        }
        Command::Eval => {
            let report = pipeline.eval().map_err(anyhow::Error::from)?;
            print!("{}", report.to_text());
        }
        Command::Pipeline => {
            let report = pipeline.run().map_err(anyhow::Error::from)?;
            info!("artifacts in {out}");
            print!("{}", report.to_text());
        }
        Command::Synth { .. } | Command::ConfigReference => unreachable!("handled before loading a config"),
    }
    Ok(())
}

fn synth(
    kind: SynthKind,
    out: &PathBuf,
    seed: u64,
    train_queries: Option<usize>,
    test_queries: Option<usize>,
) -> Result<(), Failure> {
    let bench = match kind {
        SynthKind::Text => {
            let d = TextBenchOptions::default();
            text_benchmark(
                &TextBenchOptions {
                    train_queries: train_queries.unwrap_or(d.train_queries),
                    test_queries: test_queries.unwrap_or(d.test_queries),
                    ..d
                },
                seed,
            )
        }
        SynthKind::Planted => {
            let d = PlantedOptions::default();
            planted_benchmark(
                &PlantedOptions {
                    train_queries: train_queries.unwrap_or(d.train_queries),
                    test_queries: test_queries.unwrap_or(d.test_queries),
                    ..d
                },
                seed,
            )
        }
    }
    .map_err(anyhow::Error::from)?;
    let path = bench.write_with_config(out, seed).map_err(anyhow::Error::from)?;
    println!("wrote {}", path.display());
    Ok(())
}
