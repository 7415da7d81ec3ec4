//! The `adopt` command line.
//!
//! Exit status is 0 on success, 1 for bad arguments, configuration or input
//! files, and 2 for failures while running.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{PromptBundle, RunConfig, DEFAULT_CONFIG_TOML};
use crate::error::{Error, Result};
use crate::orchestrator::evaluate_prompts;
use crate::pipeline::write_traces;
use crate::shapley::{allocate_budgets, exact_shapley, kernel_shap, parse_samples, Coalition, ValueTable};
use crate::tasks::simulator::{default_quota, default_steps, summary_table};
use crate::tasks::{load_dataset, metric_by_id, simulate_allocation, Policy, SimulationSettings};

#[derive(Debug, Parser)]
#[command(
    name = "adopt",
    version,
    about = "Optimize the prompts of a multi-step LLM pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the optimization loop described by a config file.
    Optimize(OptimizeArgs),
    /// Score a saved prompt bundle on a dataset.
    Eval(EvalArgs),
    /// Estimate step contributions from coalition samples.
    Shapley(ShapleyArgs),
    /// Compare budget allocation policies on a synthetic pipeline.
    Simulate(SimulateArgs),
    /// Show or check configuration.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (overrides the config).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// JSON Lines dataset to score on.
    #[arg(long)]
    data: PathBuf,
    /// Take backends from this config instead of the bundle.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ShapleyArgs {
    /// JSON Lines `{"z": "0101", "v": 0.5}` records.
    #[arg(long)]
    samples: PathBuf,
    /// Also split this many candidates across the steps.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 1)]
    b_min: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// uniform, random, shapley or all.
    #[arg(long, default_value = "all")]
    policy: String,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 50)]
    runs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    target: f64,
    /// Total candidates per iteration; defaults to 2m.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
    /// Write one JSON line per run here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    print_defaults: bool,
    /// Load and resolve a config, reporting any problem.
    #[arg(long)]
    check: Option<PathBuf>,
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Optimize(a) => optimize(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Shapley(a) => shapley(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Config(a) => config(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_config() || matches!(e, Error::InvalidTemplate(_)) {
                1
            } else {
                2
            }
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::file(path, e))?,
    ))
}

fn optimize(args: OptimizeArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if args.jobs.is_some() {
        config.jobs = args.jobs;
        config.validate()?;
    }
    let mut run = config.resolve()?;
    if let Some(dir) = args.output {
        run.output_dir = dir;
    }
    let backend = run.backends.build()?;
    let trainer = run.trainer(backend)?;

    let dir = &run.output_dir;
    let traces_dir = dir.join("traces");
    std::fs::create_dir_all(&traces_dir).map_err(|e| Error::file(&traces_dir, e))?;
    let mut rounds = create(&dir.join("rounds.jsonl"))?;
    let outcome = trainer.train(run.prompts.clone(), &mut |report, artifacts| {
        serde_json::to_writer(&mut rounds, report)?;
        rounds.write_all(b"\n")?;
        rounds.flush()?;
        let path = traces_dir.join(format!("round-{:03}.jsonl", report.round));
        write_traces(create(&path)?, &artifacts.traces)
    })?;

    let bundle_path = dir.join("prompts.json");
    let mut w = create(&bundle_path)?;
    serde_json::to_writer_pretty(&mut w, &run.bundle(outcome.best_prompts.clone()))?;
    w.flush()?;
    writeln!(
        out,
        "dev score {:.4} -> {:.4} (best at round {} of {})",
        outcome.baseline_dev_score,
        outcome.best_dev_score,
        outcome.best_round,
        outcome.reports.len()
    )?;
    writeln!(out, "wrote {}", bundle_path.display())?;
    Ok(())
}

fn eval(args: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = PromptBundle::load(&args.bundle)?;
    let pipeline = bundle.pipeline.clone().into_pipeline()?;
    pipeline.check_prompts(&bundle.prompts)?;
    let examples = load_dataset(&args.data)?;
    let backends = match &args.config {
        Some(path) => RunConfig::load(path)?.resolve()?.backends,
        None => bundle.backend.clone(),
    };
    let backend = backends.build()?;
    let metric = metric_by_id(&bundle.metric)?;
    let score = evaluate_prompts(
        &pipeline,
        &bundle.prompts,
        &examples,
        metric.as_ref(),
        backend.as_ref(),
        bundle.seed,
    )?;
    writeln!(
        out,
        "{}",
        json!({"metric": bundle.metric, "cases": examples.len(), "score": score})
    )?;
    Ok(())
}

fn shapley(args: ShapleyArgs, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&args.samples).map_err(|e| Error::file(&args.samples, e))?;
    let (samples, m) = parse_samples(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: args.samples.clone(),
            line,
            message,
        },
        other => other,
    })?;
    if samples.is_empty() {
        return Err(Error::Parse {
            path: args.samples,
            line: 0,
            message: "no samples".into(),
        });
    }
    let table = ValueTable::from_samples(m, &samples)?;
    if table.get(0).is_none() || table.get(Coalition::full(m).mask()).is_none() {
        return Err(Error::Parse {
            path: args.samples,
            line: 0,
            message: "samples must include the all-weak and all-strong coalitions".into(),
        });
    }
    let estimate = if table.is_complete() {
        exact_shapley(&table, m)?
    } else {
        kernel_shap(&samples, m)?
    };
    let mut report = serde_json::to_value(&estimate)?;
    if let Some(total) = args.budget {
        let alloc = allocate_budgets(&estimate.phi, total, args.b_min)?;
        report["budgets"] = json!(alloc.budgets);
    }
    writeln!(out, "{report}")?;
    Ok(())
}

fn simulate(args: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let policies: Vec<Policy> = if args.policy == "all" {
        Policy::ALL.to_vec()
    } else {
        vec![args.policy.parse()?]
    };
    if args.m == 0 {
        return Err(Error::config("--m must be at least 1"));
    }
    let results = policies
        .into_iter()
        .map(|policy| {
            simulate_allocation(&SimulationSettings {
                steps: default_steps(args.m),
                policy,
                target: args.target,
                total_budget: args.budget.unwrap_or(2 * args.m),
                b_min: 1,
                runs: args.runs,
                seed: args.seed,
                max_iterations: args.max_iterations,
                coalition_quota: default_quota(args.m),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Domain(msg) => Error::Config(msg),
            other => other,
        })?;
    write!(out, "{}", summary_table(&results))?;
    if let Some(path) = args.out {
        let mut w = create(&path)?;
        for result in &results {
            for run in &result.runs {
                let record = json!({
                    "policy": result.policy,
                    "run": run.run,
                    "iterations": run.iterations,
                    "censored": run.censored,
                    "final_score": run.final_score,
                });
                writeln!(w, "{record}")?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn config(args: ConfigArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(path) = args.check {
        let run = RunConfig::load(&path)?.resolve()?;
        writeln!(
            out,
            "ok: {} steps, {} train / {} dev cases",
            run.pipeline.steps().len(),
            run.train.len(),
            run.dev.len()
        )?;
        return Ok(());
    }
    if args.print_defaults {
        write!(out, "{DEFAULT_CONFIG_TOML}")?;
        return Ok(());
    }
    Err(Error::config(
        "nothing to do: pass --print-defaults or --check <path>",
    ))
}
