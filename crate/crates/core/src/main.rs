use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diverse_replay::exec::{self, ExecMode};
use diverse_replay::harness::{describe_checkpoint, execute, ExperimentConfig, Plan, RunOptions, SweepParam};
use diverse_replay::tensor::Checkpoint;
use diverse_replay::trainer::Strategy;
use diverse_replay::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(version, about = "Class-incremental learning with generator-diversified replay")]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy on every seed.
    Run(Common),
    /// Compare replay with generators trained on growing subsets of the loss.
    Ablate(Common),
    /// Vary one setting across rows.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of n, depth, pool_size, budget, strategy.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; a per-parameter default list otherwise.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// List the records and learner state stored in a checkpoint.
    InspectCheckpoint { path: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Continue from the latest task checkpoint of each run.
    #[arg(long)]
    resume: bool,
    /// Skip writing task-boundary checkpoints.
    #[arg(long)]
    no_checkpoints: bool,
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &c.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = c.strategy {
        cfg.train.strategy = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(c: &Common, plan: Plan) -> Result<bool, Error> {
    let cfg = load_config(c)?;
    let opts = RunOptions {
        checkpoint_dir: (!c.no_checkpoints).then(|| cfg.output_dir.join("checkpoints")),
        resume: c.resume,
    };
    let outcome = execute(&cfg, &plan, &opts)?;
    outcome.report.write_to(&cfg.output_dir, Some(&outcome.timing))?;
    print!("{}", outcome.report.summary());
    println!("wrote {}", cfg.output_dir.display());
    Ok(!outcome.report.partial)
}

fn dispatch(cli: Cli) -> Result<bool, Error> {
    if cli.sequential {
        exec::set_mode(ExecMode::Sequential);
    }
    match cli.command {
        Command::Run(c) => experiment(&c, Plan::Run),
        Command::Ablate(c) => experiment(&c, Plan::Ablate),
        Command::Sweep { common, param, values } => {
            let values = if values.is_empty() { param.default_values() } else { values };
            experiment(&common, Plan::Sweep(param, values))
        }
        Command::InspectCheckpoint { path } => {
            let ck = Checkpoint::load(&path)?;
            print!("{}", describe_checkpoint(&ck)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some runs failed; the report is flagged as partial");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
