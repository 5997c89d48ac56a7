use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use causal_amortized::dataset::Task;
use causal_amortized::domain::DomainConfig;
use causal_amortized::graph::Graph;
use causal_amortized::metrics::{evaluate, to_json_lines};
use causal_amortized::model::{EdgeBeliefs, Model};
use causal_amortized::simulate::indexed_task;
use causal_amortized::suite::{run_suite, SuiteConfig, SuiteName};
use causal_amortized::train::{RunConfig, Trainer};
use causal_amortized::{Error, Result};

#[derive(Parser)]
#[command(name = "causal-amortized", version, about = "Simulate, train, predict and evaluate causal structure")]
struct Cli {
    /// JSON configuration of the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 1 keeps every command single-threaded and reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated task directories.
    Simulate,
    /// Train a model; writes checkpoint/, metrics.jsonl and config.json.
    Train {
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write theta.csv for a task directory or a directory of them.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score beliefs (theta.csv or a 0/1 graph.csv) against a true graph.csv,
    /// or matching subdirectories of two directories.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
    /// Run an acceptance suite: invariance, gradients, oracles, learning,
    /// acyclicity or size_generalization.
    Suite { name: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    domain: DomainConfig,
    tasks: usize,
    d: usize,
    n: usize,
    seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            domain: DomainConfig::linear(),
            tasks: 1,
            d: 5,
            n: 100,
            seed: 0,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))
        }
        None => Ok(T::default()),
    }
}

fn write_resolved(out: &Path, value: &impl Serialize) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate => {
            let mut cfg: SimulateConfig = load_config(cli.config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cfg.domain.validate()?;
            write_resolved(out, &cfg)?;
            simulate(&cfg, out, cli.parallel.max(1))?;
            let summary = serde_json::json!({
                "tasks": cfg.tasks, "d": cfg.d, "n": cfg.n,
                "domain": cfg.domain.kind.name(), "seed": cfg.seed,
            });
            println!("{summary}");
        }
        Command::Train { resume } => {
            let mut trainer = match resume {
                Some(dir) => Trainer::resume(dir)?,
                None => {
                    let mut cfg: RunConfig = load_config(cli.config.as_deref())?;
                    if let Some(s) = cli.seed {
                        cfg.seed = s;
                    }
                    cfg.schedule.workers = if cli.parallel > 1 { cli.parallel } else { 0 };
                    Trainer::new(cfg)?
                }
            };
            let history = trainer.run(Some(out))?;
            let last = history.last();
            println!(
                "{}",
                serde_json::json!({
                    "steps": trainer.state.step,
                    "loss": last.map(|r| r.loss),
                    "lambda": trainer.state.lambda,
                    "checkpoint": out.join("checkpoint"),
                })
            );
        }
        Command::Predict { checkpoint, data } => {
            let model = Model::load(checkpoint)?;
            write_resolved(out, &serde_json::json!({"checkpoint": checkpoint, "data": data}))?;
            let dirs = task_dirs(data)?;
            for (name, dir) in &dirs {
                let ds = causal_amortized::dataset::read_dataset(dir, None)?;
                let beliefs = model.predict(&ds)?;
                let target = if dirs.len() == 1 && name.is_empty() { out.to_path_buf() } else { out.join(name) };
                fs::create_dir_all(&target)?;
                fs::write(target.join("theta.csv"), beliefs.to_csv())?;
            }
            println!("{}", serde_json::json!({"predicted": dirs.len(), "out": out}));
        }
        Command::Evaluate { pred, truth, tau } => {
            write_resolved(out, &serde_json::json!({"pred": pred, "truth": truth, "tau": tau}))?;
            if truth.is_dir() {
                let mut reports = Vec::new();
                for (name, dir) in task_dirs(truth)? {
                    let g = Graph::read(&dir.join("graph.csv"))?;
                    let b = EdgeBeliefs::read(&pred.join(&name).join("theta.csv"))?;
                    reports.push(evaluate(&b, &g, *tau)?);
                }
                let lines = to_json_lines(&reports)?;
                fs::write(out.join("reports.jsonl"), &lines)?;
                print!("{lines}");
            } else {
                let g = Graph::read(truth)?;
                let b = EdgeBeliefs::read(pred)?;
                let report = serde_json::to_string_pretty(&evaluate(&b, &g, *tau)?)?;
                fs::write(out.join("report.json"), &report)?;
                println!("{report}");
            }
        }
        Command::Suite { name } => {
            let suite: SuiteName = name.parse()?;
            let mut cfg: SuiteConfig = load_config(cli.config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
                cfg.run.seed = s;
            }
            write_resolved(out, &cfg)?;
            let report = run_suite(suite, &cfg, Some(out))?;
            let text = serde_json::to_string_pretty(&report)?;
            fs::write(out.join(format!("{}.json", suite.as_str())), &text)?;
            println!("{text}");
            if !report.pass {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// A task directory by itself, or its task subdirectories sorted by name.
fn task_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if dir.join("values.csv").exists() || dir.join("graph.csv").exists() {
        return Ok(vec![(String::new(), dir.to_path_buf())]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.push((name, path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::invalid(format!("{} holds no task directories", dir.display())));
    }
    Ok(out)
}

fn simulate(cfg: &SimulateConfig, out: &Path, threads: usize) -> Result<()> {
    let width = cfg.tasks.saturating_sub(1).to_string().len().max(4);
    let one = |i: usize| -> Result<()> {
        let task: Task = indexed_task(&cfg.domain, cfg.d, cfg.n, cfg.seed, i as u64)?;
        task.write_dir(&out.join(format!("task_{i:0width$}")))
    };
    if threads <= 1 {
        return (0..cfg.tasks).try_for_each(one);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t..cfg.tasks).step_by(threads).try_for_each(one)))
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("simulation thread panicked"))))
    })
}
