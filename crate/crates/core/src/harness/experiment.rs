use std::borrow::Cow;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::{Failure, Report, ReportRow, RunTiming, Timing};
use crate::data::{TaskStream, UnlabeledPool};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::Checkpoint;
use crate::trainer::{IncrementalLearner, Phase, RunMetrics, Strategy, TrainConfig};

/// One row of an experiment: a training configuration run on every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub train: TrainConfig,
    pub memory_budget: usize,
    /// Use only the first `n` unlabeled images.
    pub pool_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Generated counterparts per exemplar.
    N,
    /// Residual blocks per generator.
    Depth,
    PoolSize,
    Budget,
    Strategy,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::Depth => "depth",
            SweepParam::PoolSize => "pool_size",
            SweepParam::Budget => "budget",
            SweepParam::Strategy => "strategy",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepParam::N => &["0", "1", "2", "4"],
            SweepParam::Depth => &["1", "2", "3"],
            SweepParam::PoolSize => &["100", "500", "2000"],
            SweepParam::Budget => &["30", "60", "120"],
            SweepParam::Strategy => &["finetune", "replay", "replay_mixup", "replay_generator"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "n" => SweepParam::N,
            "depth" | "d" => SweepParam::Depth,
            "pool_size" | "pool-size" => SweepParam::PoolSize,
            "budget" | "memory_budget" | "memory-budget" => SweepParam::Budget,
            "strategy" => SweepParam::Strategy,
            other => {
                return Err(Error::config(
                    "--param",
                    format!("unknown sweep parameter `{other}` (n, depth, pool_size, budget, strategy)"),
                ))
            }
        })
    }
}

/// What an experiment runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    Run,
    Ablate,
    Sweep(SweepParam, Vec<String>),
}

impl Plan {
    pub fn verb(&self) -> String {
        match self {
            Plan::Run => "run".into(),
            Plan::Ablate => "ablate".into(),
            Plan::Sweep(p, _) => format!("sweep {p}"),
        }
    }

    pub fn variants(&self, cfg: &ExperimentConfig) -> Result<Vec<Variant>> {
        let base = Variant {
            label: cfg.train.strategy.name().to_string(),
            train: cfg.train.clone(),
            memory_budget: cfg.protocol.memory_budget,
            pool_size: None,
        };
        match self {
            Plan::Run => Ok(vec![base]),
            Plan::Ablate => ablation_variants(&base),
            Plan::Sweep(param, values) => values.iter().map(|v| sweep_variant(&base, *param, v)).collect(),
        }
    }
}

/// Rows in order: replay without generators, generators trained on
/// cross-entropy plus semantic distance, then with the Gram distance added,
/// then the full loss with the cycle pass.
pub fn ablation_variants(base: &Variant) -> Result<Vec<Variant>> {
    if base.train.strategy != Strategy::ReplayGenerator {
        return Err(Error::config("train.strategy", "ablation needs strategy = replay_generator"));
    }
    let with = |label: &str, strategy: Strategy, lambda: f64, lambda_cyc: f64| {
        let mut v = base.clone();
        v.label = label.into();
        v.train.strategy = strategy;
        if strategy == Strategy::ReplayGenerator {
            v.train.generator_loss.lambda = lambda;
            v.train.generator_loss.lambda_cyc = lambda_cyc;
        }
        v
    };
    let g = base.train.generator_loss;
    Ok(vec![
        with("baseline", Strategy::Replay, g.lambda, g.lambda_cyc),
        with("+sc", Strategy::ReplayGenerator, 0.0, 0.0),
        with("+sc+sdc", Strategy::ReplayGenerator, g.lambda, 0.0),
        with("+sc+sdc+cycle", Strategy::ReplayGenerator, g.lambda, g.lambda_cyc),
    ])
}

fn sweep_variant(base: &Variant, param: SweepParam, value: &str) -> Result<Variant> {
    let number = || {
        value
            .parse::<usize>()
            .map_err(|_| Error::config("--values", format!("`{value}` is not a non-negative integer")))
    };
    let mut v = base.clone();
    match param {
        SweepParam::N => v.train.n_generated = number()?,
        SweepParam::Depth => v.train.generator_depth = number()?,
        SweepParam::PoolSize => v.pool_size = Some(number()?),
        SweepParam::Budget => v.memory_budget = number()?,
        SweepParam::Strategy => v.train.strategy = value.parse()?,
    }
    v.label = if param == SweepParam::Strategy {
        v.train.strategy.name().to_string()
    } else {
        format!("{param}={value}")
    };
    v.train.validate()?;
    if v.pool_size == Some(0) {
        return Err(Error::config("--values", "pool size must be positive"));
    }
    if v.memory_budget == 0 && v.train.strategy.uses_memory() {
        return Err(Error::config("--values", "replay strategies need a positive budget"));
    }
    Ok(v)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Checkpoints go to `<dir>/<row>/seed-<s>/task-<i>.ckpt` after each task.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue each job from its latest checkpoint when one exists.
    pub resume: bool,
}

/// Report plus the wall-clock data kept out of it.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub timing: Timing,
}

struct JobResult {
    metrics: RunMetrics,
    error: Option<String>,
    secs: f64,
}

/// Runs every variant on every seed. Jobs run in parallel; a failed job
/// leaves its partial metrics in the report and flags it as partial.
pub fn execute(cfg: &ExperimentConfig, plan: &Plan, opts: &RunOptions) -> Result<Outcome> {
    let variants = plan.variants(cfg)?;
    let data: Vec<(TaskStream, UnlabeledPool)> =
        cfg.seeds.iter().map(|&s| cfg.materialize(s)).collect::<Result<_>>()?;
    for v in &variants {
        if let Some(n) = v.pool_size {
            if n > data[0].1.len() {
                return Err(Error::config(
                    "--values",
                    format!("pool size {n} exceeds the {} available unlabeled images", data[0].1.len()),
                ));
            }
        }
    }
    let backbone = cfg.backbone();
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..cfg.seeds.len()).map(move |s| (v, s)))
        .collect();
    let start = Instant::now();
    let results = exec::map_range(jobs.len(), |j| {
        let (vi, si) = jobs[j];
        let (variant, seed) = (&variants[vi], cfg.seeds[si]);
        let (stream, pool) = &data[si];
        let dir = opts
            .checkpoint_dir
            .as_ref()
            .map(|d| d.join(dir_name(&variant.label)).join(format!("seed-{seed}")));
        run_job(variant, seed, stream, pool, &backbone, dir.as_deref(), opts.resume)
    });
    let total_secs = start.elapsed().as_secs_f64();

    let mut rows = Vec::with_capacity(variants.len());
    let mut failures = Vec::new();
    let mut runs = Vec::new();
    let mut results = results.into_iter();
    for v in &variants {
        let mut metrics = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let r = results.next().expect("one result per job");
            if let Some(error) = r.error {
                log::error!("{} seed {seed}: {error}", v.label);
                failures.push(Failure {
                    label: v.label.clone(),
                    seed,
                    error,
                });
            }
            runs.push(RunTiming {
                label: v.label.clone(),
                seed,
                wall_clock_secs: r.secs,
            });
            metrics.push(r.metrics);
        }
        rows.push(ReportRow::new(v, metrics));
    }
    let report = Report {
        config_hash: cfg.hash(),
        verb: plan.verb(),
        seeds: cfg.seeds.clone(),
        partial: !failures.is_empty(),
        failures,
        rows,
    };
    Ok(Outcome {
        report,
        timing: Timing { total_secs, runs },
    })
}

fn dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '=' { c } else { '-' })
        .collect::<String>()
        .trim_matches('-')
        .to_string()
}

fn run_job(
    variant: &Variant,
    seed: u64,
    stream: &TaskStream,
    pool: &UnlabeledPool,
    backbone: &crate::nets::BackboneConfig,
    dir: Option<&Path>,
    resume: bool,
) -> JobResult {
    let start = Instant::now();
    let pool: Cow<'_, UnlabeledPool> = match variant.pool_size {
        Some(n) => Cow::Owned(pool.truncated(n)),
        None => Cow::Borrowed(pool),
    };
    let mut train = variant.train.clone();
    train.seed = seed;
    let mut learner = match start_learner(&train, variant.memory_budget, stream, &pool, backbone, dir, resume) {
        Ok(l) => l,
        Err(e) => {
            let mut metrics = RunMetrics::new(seed, train.strategy);
            metrics.completed = false;
            return JobResult {
                metrics,
                error: Some(e.to_string()),
                secs: start.elapsed().as_secs_f64(),
            };
        }
    };
    let mut error = None;
    while learner.phase() != Phase::Finished {
        let step = learner.run_task().and_then(|acc| {
            log::info!("{} seed {seed}: task {} accuracy {acc:.4}", variant.label, learner.task_index());
            match dir {
                Some(d) => save_checkpoint(&learner, d),
                None => Ok(()),
            }
        });
        if let Err(e) = step {
            error = Some(format!("task {}: {e}", learner.task_index() + 1));
            break;
        }
    }
    JobResult {
        metrics: learner.into_metrics(),
        error,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn start_learner<'a>(
    train: &TrainConfig,
    budget: usize,
    stream: &'a TaskStream,
    pool: &'a UnlabeledPool,
    backbone: &crate::nets::BackboneConfig,
    dir: Option<&Path>,
    resume: bool,
) -> Result<IncrementalLearner<'a>> {
    if resume {
        if let Some(path) = dir.and_then(latest_checkpoint) {
            let ck = Checkpoint::load(&path)?;
            let learner = IncrementalLearner::from_checkpoint(&ck, stream, pool)?;
            if learner.config() != train
                || learner.memory().budget() != budget
                || learner.network().backbone.config() != backbone
            {
                return Err(Error::config(
                    "--resume",
                    format!("{} was written by a different configuration", path.display()),
                ));
            }
            log::info!("resuming from {}", path.display());
            return Ok(learner);
        }
    }
    IncrementalLearner::new(stream, pool, backbone.clone(), budget, train.clone())
}

fn checkpoint_path(dir: &Path, tasks_done: usize) -> PathBuf {
    dir.join(format!("task-{tasks_done}.ckpt"))
}

fn save_checkpoint(learner: &IncrementalLearner<'_>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    learner.to_checkpoint()?.save(&checkpoint_path(dir, learner.task_index()))
}

/// Highest-numbered `task-<i>.ckpt` in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let entries = std::fs::read_dir(dir).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let i: usize = name.strip_prefix("task-")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((i, e.path()))
        })
        .max_by_key(|(i, _)| *i)
        .map(|(_, p)| p)
}
