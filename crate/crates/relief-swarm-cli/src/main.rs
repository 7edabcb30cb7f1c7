//! Command-line surface: scenario generation, training, evaluation, the
//! exhaustive oracle, and report formatting.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use relief_swarm::eval::{run_eval, EvalReport, NamedPolicy};
use relief_swarm::grid::Scenario;
use relief_swarm::oracle::solve_exact;
use relief_swarm::scenario::{generate, load_density, DensityGrid, ScenarioRecipe};
use relief_swarm::train::{fit, StepLog, TrainSpec};

#[derive(Parser)]
#[command(name = "relief-swarm", version, about = "Collaborative crowdsensing route-planning workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario instance from a recipe.
    Gen {
        /// Recipe JSON file.
        #[arg(long)]
        recipe: PathBuf,
        /// Generation seed.
        #[arg(long)]
        seed: u64,
        /// Output scenario file.
        #[arg(long)]
        out: PathBuf,
        /// Density-grid JSON backing check-in placement.
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// Train a policy and persist the run directory.
    Train {
        /// Training spec JSON (hyperparameters + scenario source).
        #[arg(long)]
        config: PathBuf,
        /// Run directory for config snapshot, log, and checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate policies over seeded scenario draws.
    Eval {
        /// Policy specs: `greedy`, `random`, or a checkpoint path.
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        /// Recipe JSON file.
        #[arg(long)]
        recipe: PathBuf,
        /// Number of evaluation seeds (0..N, offset by --seed-base).
        #[arg(long)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        /// Episode horizon override (defaults to the recipe's time_limit).
        #[arg(long)]
        time_limit: Option<usize>,
        /// Report output (file, or directory to hold eval_report.json).
        #[arg(long)]
        out: PathBuf,
        /// Density-grid JSON backing check-in placement.
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// Exhaustively solve a tiny scenario.
    Oracle {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// Number of moves to plan.
        #[arg(long)]
        horizon: usize,
        /// Write the oracle report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit a run directory as CSV or JSON.
    Report {
        /// Run directory (training run or a directory with eval_report.json).
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        format: ReportFormat,
        /// Output directory for CSV, or file for JSON (defaults to the
        /// run directory / stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

fn read_recipe(path: &Path) -> Result<ScenarioRecipe> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ScenarioRecipe::from_json(&text)?)
}

fn read_density(path: &Path, recipe: &ScenarioRecipe) -> Result<DensityGrid> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(load_density(&text, recipe)?)
}

fn cmd_gen(recipe: &Path, seed: u64, out: &Path, density: Option<&Path>) -> Result<()> {
    let recipe_val = read_recipe(recipe)?;
    let density_val = density
        .map(|p| read_density(p, &recipe_val))
        .transpose()?;
    let scenario = generate(&recipe_val, seed, density_val.as_ref())?;
    fs::write(out, scenario.to_json()).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {} ({}x{}, {} tasks, {} agents)",
        out.display(),
        scenario.width,
        scenario.height,
        scenario.tasks.len(),
        scenario.agent_count()
    );
    Ok(())
}

fn cmd_train(config: &Path, out: &Path) -> Result<()> {
    let (train_config, source) = TrainSpec::load(config)?;
    let result = fit(&train_config, &source, Some(out))?;
    let last_eval = result.log.iter().rev().find_map(|l| l.eval_rate);
    println!(
        "trained {} steps; final checkpoint at {}",
        result.checkpoint.step_counter,
        out.join("final.ckpt").display()
    );
    if let Some(rate) = last_eval {
        println!("last greedy evaluation rate: {rate:.4}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    policies: &[String],
    recipe: &Path,
    seeds: u64,
    seed_base: u64,
    time_limit: Option<usize>,
    out: &Path,
    density: Option<&Path>,
) -> Result<()> {
    let recipe_val = read_recipe(recipe)?;
    let density_val = density
        .map(|p| read_density(p, &recipe_val))
        .transpose()?;
    let parsed: Vec<NamedPolicy> = policies
        .iter()
        .map(|p| NamedPolicy::parse(p))
        .collect::<Result<_, _>>()?;
    let recipe_name = recipe
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recipe".into());
    let seed_list: Vec<u64> = (seed_base..seed_base + seeds).collect();
    let report = run_eval(
        &parsed,
        &[(recipe_name, recipe_val)],
        &seed_list,
        time_limit,
        density_val.as_ref(),
    )?;
    let path = if out.is_dir() {
        out.join("eval_report.json")
    } else {
        out.to_path_buf()
    };
    fs::write(&path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    for entry in &report.entries {
        println!(
            "{} on {}: mean rate {:.4} (± {:.4}) over {} seeds",
            entry.policy,
            entry.recipe,
            entry.mean_rate,
            entry.std_rate,
            entry.episodes.len()
        );
    }
    Ok(())
}

fn cmd_oracle(scenario: &Path, horizon: usize, out: Option<&Path>) -> Result<()> {
    let text =
        fs::read_to_string(scenario).with_context(|| format!("reading {}", scenario.display()))?;
    let scenario_val = Scenario::from_json(&text)?;
    let started = Instant::now();
    let result = solve_exact(&scenario_val, horizon)?;
    let report = serde_json::json!({
        "optimal": result.optimal,
        "plan": result.plan,
        "nodes": result.nodes,
        "runtime_ms": started.elapsed().as_millis() as u64,
    });
    let pretty = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => {
            fs::write(path, pretty).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => println!("{pretty}"),
    }
    Ok(())
}

fn train_log_csv(log: &[StepLog]) -> String {
    let mut out = String::from("step,loss,epsilon,eval_rate\n");
    for entry in log {
        let rate = entry
            .eval_rate
            .map(|r| format!("{r:.4}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            entry.step, entry.loss, entry.epsilon, rate
        ));
    }
    out
}

fn cmd_report(run: &Path, format: ReportFormat, out: Option<&Path>) -> Result<()> {
    let eval_path = run.join("eval_report.json");
    let log_path = run.join("log.jsonl");
    if eval_path.exists() {
        let report = EvalReport::from_json(&fs::read_to_string(&eval_path)?)?;
        match format {
            ReportFormat::Json => {
                let text = report.to_json();
                match out {
                    Some(path) => fs::write(path, text)?,
                    None => println!("{text}"),
                }
            }
            ReportFormat::Csv => {
                let dir = out.unwrap_or(run);
                fs::create_dir_all(dir)?;
                fs::write(dir.join("summary.csv"), report.summary_csv())?;
                fs::write(dir.join("curves.csv"), report.curves_csv())?;
                fs::write(dir.join("swaps.csv"), report.swaps_csv())?;
                println!(
                    "wrote {}, {}, {}",
                    dir.join("summary.csv").display(),
                    dir.join("curves.csv").display(),
                    dir.join("swaps.csv").display()
                );
            }
        }
        return Ok(());
    }
    if log_path.exists() {
        let mut log = Vec::new();
        for line in fs::read_to_string(&log_path)?.lines() {
            if line.trim().is_empty() {
                continue;
            }
            log.push(serde_json::from_str::<StepLog>(line).context("parsing log.jsonl")?);
        }
        match format {
            ReportFormat::Json => {
                let text = serde_json::to_string_pretty(&log)?;
                match out {
                    Some(path) => fs::write(path, text)?,
                    None => println!("{text}"),
                }
            }
            ReportFormat::Csv => {
                let dir = out.unwrap_or(run);
                fs::create_dir_all(dir)?;
                fs::write(dir.join("training.csv"), train_log_csv(&log))?;
                println!("wrote {}", dir.join("training.csv").display());
            }
        }
        return Ok(());
    }
    bail!(
        "{} holds neither eval_report.json nor log.jsonl",
        run.display()
    );
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen {
            recipe,
            seed,
            out,
            density,
        } => cmd_gen(recipe, *seed, out, density.as_deref()),
        Command::Train { config, out } => cmd_train(config, out),
        Command::Eval {
            policies,
            recipe,
            seeds,
            seed_base,
            time_limit,
            out,
            density,
        } => cmd_eval(
            policies,
            recipe,
            *seeds,
            *seed_base,
            *time_limit,
            out,
            density.as_deref(),
        ),
        Command::Oracle {
            scenario,
            horizon,
            out,
        } => cmd_oracle(scenario, *horizon, out.as_deref()),
        Command::Report { run, format, out } => cmd_report(run, *format, out.as_deref()),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
