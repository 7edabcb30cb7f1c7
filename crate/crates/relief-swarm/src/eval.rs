//! Evaluation harness: seeded episode rollouts for every policy kind,
//! aggregated reports, and the CSV/JSON emitters behind the CLI.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{greedy_step, random_step};
use crate::grid::{
    completion_rate, initial_completion_sweep, step, AgentKind, CellIndex, EpisodeTrace,
    GridError, PowerLog, Scenario, Swap,
};
use crate::manf::{agent_q, embed, masked_argmax, ManfError, PolicyCheckpoint};
use crate::obs::build_bundle;
use crate::par::ordered_map_range;
use crate::scenario::{generate, DensityGrid, ScenarioError, ScenarioRecipe};

/// Caps evaluation parallelism when set to a positive integer.
pub const THREADS_ENV: &str = "RELIEF_SWARM_THREADS";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Manf(#[from] ManfError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("policy: {0}")]
    BadPolicy(String),
    #[error("incompatible: {0}")]
    Incompatible(String),
}

/// A runnable planner.
pub enum PolicyKind {
    Greedy,
    Random,
    Learned(Box<PolicyCheckpoint>),
}

pub struct NamedPolicy {
    pub name: String,
    pub kind: PolicyKind,
}

impl NamedPolicy {
    /// `greedy`, `random`, or a checkpoint path.
    pub fn parse(spec: &str) -> Result<Self, EvalError> {
        match spec {
            "greedy" => Ok(Self {
                name: "greedy".into(),
                kind: PolicyKind::Greedy,
            }),
            "random" => Ok(Self {
                name: "random".into(),
                kind: PolicyKind::Random,
            }),
            path => {
                let ckpt = PolicyCheckpoint::load(Path::new(path))
                    .map_err(|e| EvalError::BadPolicy(format!("{path}: {e}")))?;
                let name = Path::new(path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.to_string());
                Ok(Self {
                    name,
                    kind: PolicyKind::Learned(Box::new(ckpt)),
                })
            }
        }
    }
}

/// Runs one episode of `time_limit` moves. Learned policies act greedily
/// (ε=0); the random policy draws from a generator seeded with `seed`.
pub fn rollout(
    scenario: &Scenario,
    policy: &PolicyKind,
    time_limit: usize,
    seed: u64,
) -> Result<(EpisodeTrace, PowerLog), EvalError> {
    let (mut world, mut agents) = scenario.build()?;
    if let PolicyKind::Learned(ckpt) = policy {
        if ckpt.topo.width != world.width()
            || ckpt.topo.height != world.height()
            || ckpt.topo.n_agents != agents.len()
        {
            return Err(EvalError::Incompatible(format!(
                "checkpoint {}×{}/{} agents vs scenario {}×{}/{}",
                ckpt.topo.width,
                ckpt.topo.height,
                ckpt.topo.n_agents,
                world.width(),
                world.height(),
                agents.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let uav_ids: Vec<usize> = agents
        .iter()
        .filter(|a| a.kind == AgentKind::Uav)
        .map(|a| a.id)
        .collect();
    let mut powers: Vec<Vec<f64>> = agents
        .iter()
        .filter_map(|a| a.battery.map(|b| vec![b.pow]))
        .collect();
    let mut swapped: Vec<Vec<bool>> = vec![vec![false]; uav_ids.len()];

    let sweep = initial_completion_sweep(&mut world, &agents);
    let mut routes: Vec<Vec<CellIndex>> = agents.iter().map(|a| vec![a.loc]).collect();
    let mut per_step_cpt = vec![sweep.task_cpt];
    let mut per_step_swaps: Vec<Vec<Swap>> = vec![Vec::new()];

    for _ in 0..time_limit {
        let actions = match policy {
            PolicyKind::Greedy => greedy_step(&world, &agents)?,
            PolicyKind::Random => {
                let bundle = build_bundle(&world, &agents)?;
                random_step(&bundle.masks, &mut rng)
            }
            PolicyKind::Learned(ckpt) => {
                let bundle = build_bundle(&world, &agents)?;
                let s = embed(&bundle.channels, &ckpt.eval, &ckpt.topo)?;
                let mut actions = Vec::with_capacity(agents.len());
                for (local, mask) in bundle.locals.iter().zip(&bundle.masks) {
                    let q = agent_q(&s, local, &ckpt.eval, &ckpt.topo)?;
                    actions.push(masked_argmax(&q, mask)?);
                }
                actions
            }
        };
        let outcome = step(&mut world, &mut agents, &actions)?;
        for (route, &cell) in routes.iter_mut().zip(&actions) {
            route.push(cell);
        }
        per_step_cpt.push(outcome.task_cpt);
        for (u, &uav_id) in uav_ids.iter().enumerate() {
            let batt = agents
                .iter()
                .find(|a| a.id == uav_id)
                .and_then(|a| a.battery)
                .expect("UAV keeps battery");
            powers[u].push(batt.pow);
            swapped[u].push(outcome.swaps.iter().any(|s| s.uav_id == uav_id));
        }
        per_step_swaps.push(outcome.swaps);
    }

    Ok((
        EpisodeTrace {
            routes,
            per_step_cpt,
            per_step_swaps,
            horizon: time_limit,
        },
        PowerLog {
            uav_ids,
            powers,
            swapped,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub rate: f64,
    pub completed: usize,
    pub initial_tasks: usize,
    pub swap_count: usize,
    pub trace: EpisodeTrace,
    pub power_log: PowerLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: String,
    pub recipe: String,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub episodes: Vec<EpisodeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub time_limit: usize,
    pub entries: Vec<PolicyReport>,
}

fn episode_report(
    recipe: &ScenarioRecipe,
    policy: &PolicyKind,
    seed: u64,
    time_limit: usize,
    density: Option<&DensityGrid>,
) -> Result<EpisodeReport, EvalError> {
    let scenario = generate(recipe, seed, density)?;
    let (world, _) = scenario.build()?;
    let (trace, power_log) = rollout(&scenario, policy, time_limit, seed)?;
    let rate = completion_rate(&trace, &world)?;
    Ok(EpisodeReport {
        seed,
        rate,
        completed: trace.total_completed(),
        initial_tasks: world.initial_task_count(),
        swap_count: trace.per_step_swaps.iter().map(Vec::len).sum(),
        trace,
        power_log,
    })
}

fn run_eval_inner(
    policies: &[NamedPolicy],
    recipes: &[(String, ScenarioRecipe)],
    seeds: &[u64],
    time_limit: Option<usize>,
    density: Option<&DensityGrid>,
) -> Result<EvalReport, EvalError> {
    let mut entries = Vec::new();
    let mut horizon = 0;
    for (recipe_name, recipe) in recipes {
        let tl = time_limit.unwrap_or(recipe.time_limit);
        horizon = horizon.max(tl);
        for policy in policies {
            let episodes = ordered_map_range(seeds.len(), |i| {
                episode_report(recipe, &policy.kind, seeds[i], tl, density)
            });
            let episodes: Vec<EpisodeReport> =
                episodes.into_iter().collect::<Result<_, _>>()?;
            let n = episodes.len() as f64;
            let mean = episodes.iter().map(|e| e.rate).sum::<f64>() / n;
            let var = episodes
                .iter()
                .map(|e| (e.rate - mean).powi(2))
                .sum::<f64>()
                / n;
            entries.push(PolicyReport {
                policy: policy.name.clone(),
                recipe: recipe_name.clone(),
                mean_rate: mean,
                std_rate: var.sqrt(),
                episodes,
            });
        }
    }
    Ok(EvalReport {
        time_limit: horizon,
        entries,
    })
}

/// Evaluates every (policy, recipe, seed) combination and aggregates the
/// completion rates. Episodes run in parallel, capped by
/// `RELIEF_SWARM_THREADS` when set.
pub fn run_eval(
    policies: &[NamedPolicy],
    recipes: &[(String, ScenarioRecipe)],
    seeds: &[u64],
    time_limit: Option<usize>,
    density: Option<&DensityGrid>,
) -> Result<EvalReport, EvalError> {
    if seeds.is_empty() || policies.is_empty() || recipes.is_empty() {
        return Err(EvalError::BadPolicy(
            "need at least one policy, recipe, and seed".into(),
        ));
    }
    #[cfg(feature = "parallel")]
    {
        let cap = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0);
        if let Some(threads) = cap {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| EvalError::BadPolicy(format!("thread pool: {e}")))?;
            return pool.install(|| run_eval_inner(policies, recipes, seeds, time_limit, density));
        }
    }
    run_eval_inner(policies, recipes, seeds, time_limit, density)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::BadPolicy(format!("report parse: {e}")))
    }

    /// Mean/stddev table, rates with four decimals.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("policy,recipe,episodes,mean_rate,std_rate\n");
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{:.4},{:.4}",
                e.policy,
                e.recipe,
                e.episodes.len(),
                e.mean_rate,
                e.std_rate
            )
            .expect("write to string");
        }
        out
    }

    /// Per-step completion counts (index 0 is the t=0 sweep).
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("policy,recipe,seed,t,completed\n");
        for e in &self.entries {
            for ep in &e.episodes {
                for (t, &c) in ep.trace.per_step_cpt.iter().enumerate() {
                    writeln!(out, "{},{},{},{t},{c}", e.policy, e.recipe, ep.seed)
                        .expect("write to string");
                }
            }
        }
        out
    }

    /// Per-UAV power history with swap markers, one row per UAV per
    /// moment t ≥ 1.
    pub fn swaps_csv(&self) -> String {
        let mut out = String::from("policy,recipe,seed,uav,t,power,swapped\n");
        for e in &self.entries {
            for ep in &e.episodes {
                let log = &ep.power_log;
                for (u, &uav_id) in log.uav_ids.iter().enumerate() {
                    for t in 1..log.powers[u].len() {
                        writeln!(
                            out,
                            "{},{},{},{uav_id},{t},{:.2},{}",
                            e.policy,
                            e.recipe,
                            ep.seed,
                            log.powers[u][t],
                            if log.swapped[u][t] { 1 } else { 0 }
                        )
                        .expect("write to string");
                    }
                }
            }
        }
        out
    }
}
