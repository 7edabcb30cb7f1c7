//! Experience collection with masked ε-greedy exploration and the two
//! learning loops: immediate-reward regression and discounted TD learning
//! on the mixed joint value.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    initial_completion_sweep, step, AgentState, CellIndex, EpisodeTrace, GridError, GridWorld,
    JointAction, Scenario, StepOutcome, Swap,
};
use crate::manf::{
    agent_q, embed, masked_argmax, masked_max, qtot_backward, qtot_forward, ManfError,
    NetTopology, PolicyCheckpoint,
};
use crate::nn::{Gradients, NnError, RmsProp};
use crate::obs::build_bundle;
use crate::par::ordered_map;
use crate::replay::{ReplayBuffer, TransitionRecord};
use crate::scenario::{generate, ScenarioError, ScenarioRecipe};

/// Records per gradient-accumulation chunk; fixed so batch math is
/// identical at any thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Manf(#[from] ManfError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("incompatible scenario: {0}")]
    Incompatible(String),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dnn,
    Rl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    TaskOnly,
    TaskPlusMitig,
}

/// Immediate reward for one step outcome.
pub fn reward(outcome: &StepOutcome, mode: RewardMode) -> f64 {
    match mode {
        RewardMode::TaskOnly => outcome.task_cpt as f64,
        RewardMode::TaskPlusMitig => outcome.task_cpt as f64 + outcome.mitig_sum,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.1,
            decay_steps: 1024,
        }
    }
}

/// Linear anneal from `start` to `end` over `decay_steps` trainer steps,
/// then constant.
pub fn epsilon_at(step: u64, schedule: &EpsilonSchedule) -> f64 {
    if step >= schedule.decay_steps {
        schedule.end
    } else {
        let frac = step as f64 / schedule.decay_steps as f64;
        schedule.start + (schedule.end - schedule.start) * frac
    }
}

/// Per agent: explore uniformly inside the mask with probability ε,
/// otherwise take the masked argmax. Never leaves the mask.
pub fn select_actions(
    qs: &[Vec<f64>],
    masks: &[Vec<CellIndex>],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<JointAction, ManfError> {
    qs.iter()
        .zip(masks)
        .map(|(q, mask)| {
            if mask.is_empty() {
                return Err(ManfError::EmptyMask);
            }
            if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                Ok(mask[rng.gen_range(0..mask.len())])
            } else {
                masked_argmax(q, mask)
            }
        })
        .collect()
}

/// Training hyperparameters. Defaults follow the published recipe:
/// lr 1e-4, γ 0.7, target sync every 200 steps, pool 5000, batch 32,
/// ε annealed 1.0 → 0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Defaults per algorithm: task_only for rl, task_plus_mitig for dnn.
    pub reward_mode: Option<RewardMode>,
    pub use_cnn: bool,
    pub gamma: f64,
    pub lr: f64,
    /// Target-sync period P (rl only).
    pub sync_period: u64,
    /// Replay capacity M.
    pub capacity: usize,
    pub batch: usize,
    pub epsilon: EpsilonSchedule,
    pub max_steps: u64,
    pub seed: u64,
    pub hidden_mult: usize,
    pub embed_dim: usize,
    /// Greedy-evaluation cadence in trainer steps (0 disables).
    pub eval_every: u64,
    /// Scenarios averaged per evaluation probe.
    pub eval_episodes: usize,
    /// Periodic checkpoint cadence in trainer steps (0 disables).
    pub checkpoint_every: u64,
    /// Stop once a greedy evaluation reaches this completion rate.
    pub stop_at_rate: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Rl,
            reward_mode: None,
            use_cnn: true,
            gamma: 0.7,
            lr: 1e-4,
            sync_period: 200,
            capacity: 5000,
            batch: 32,
            epsilon: EpsilonSchedule::default(),
            max_steps: 2000,
            seed: 0,
            hidden_mult: 10,
            embed_dim: 32,
            eval_every: 200,
            eval_episodes: 3,
            checkpoint_every: 0,
            stop_at_rate: None,
        }
    }
}

impl TrainConfig {
    pub fn effective_reward_mode(&self) -> RewardMode {
        self.reward_mode.unwrap_or(match self.algorithm {
            Algorithm::Rl => RewardMode::TaskOnly,
            Algorithm::Dnn => RewardMode::TaskPlusMitig,
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(TrainError::InvalidConfig(format!(
                "gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        if self.batch == 0 || self.capacity < self.batch {
            return Err(TrainError::InvalidConfig(format!(
                "batch {} vs capacity {}",
                self.batch, self.capacity
            )));
        }
        Ok(())
    }
}

/// Where training episodes come from: one pinned instance, fresh draws
/// from a recipe, or draws restricted to a fixed pool of recipe seeds.
#[derive(Debug, Clone)]
pub enum ScenarioSource {
    Fixed(Scenario),
    Recipe(ScenarioRecipe),
    Pool(ScenarioRecipe, Vec<u64>),
}

impl ScenarioSource {
    pub fn time_limit(&self) -> usize {
        match self {
            ScenarioSource::Fixed(s) => s.time_limit,
            ScenarioSource::Recipe(r) | ScenarioSource::Pool(r, _) => r.time_limit,
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Result<Scenario, ScenarioError> {
        match self {
            ScenarioSource::Fixed(s) => Ok(s.clone()),
            ScenarioSource::Recipe(r) => generate(r, rng.gen(), None),
            ScenarioSource::Pool(r, seeds) => {
                let seed = seeds[rng.gen_range(0..seeds.len())];
                generate(r, seed, None)
            }
        }
    }
}

/// Runs one full episode with ε-greedy masked selection against the eval
/// nets, recording every transition for replay. The loop is inclusive of
/// the horizon step, so `time_limit + 1` transitions come back, with te=0
/// on the last one.
pub fn collect_episode(
    mut world: GridWorld,
    mut agents: Vec<AgentState>,
    checkpoint: &PolicyCheckpoint,
    time_limit: usize,
    epsilon: f64,
    reward_mode: RewardMode,
    rng: &mut impl Rng,
) -> Result<(Vec<TransitionRecord>, EpisodeTrace), TrainError> {
    let topo = &checkpoint.topo;
    let sweep = initial_completion_sweep(&mut world, &agents);
    let mut routes: Vec<Vec<CellIndex>> = agents.iter().map(|a| vec![a.loc]).collect();
    let mut per_step_cpt = vec![sweep.task_cpt];
    let mut per_step_swaps: Vec<Vec<Swap>> = vec![Vec::new()];
    let mut records = Vec::with_capacity(time_limit + 1);

    let mut bundle = build_bundle(&world, &agents)?;
    for t in 0..=time_limit {
        let s = embed(&bundle.channels, &checkpoint.eval, topo)?;
        let qs: Vec<Vec<f64>> = bundle
            .locals
            .iter()
            .map(|local| agent_q(&s, local, &checkpoint.eval, topo))
            .collect::<Result<_, _>>()?;
        let actions = select_actions(&qs, &bundle.masks, epsilon, rng)?;
        let outcome = step(&mut world, &mut agents, &actions)?;
        let next_bundle = build_bundle(&world, &agents)?;

        for (route, &cell) in routes.iter_mut().zip(&actions) {
            route.push(cell);
        }
        per_step_cpt.push(outcome.task_cpt);
        per_step_swaps.push(outcome.swaps.clone());

        records.push(TransitionRecord {
            channels_t: bundle.channels,
            channels_t1: next_bundle.channels.clone(),
            locals_t: bundle.locals,
            locals_t1: next_bundle.locals.clone(),
            masks_t1: next_bundle.masks.clone(),
            actions,
            reward: reward(&outcome, reward_mode),
            te: if t == time_limit { 0.0 } else { 1.0 },
        });
        bundle = next_bundle;
    }

    Ok((
        records,
        EpisodeTrace {
            routes,
            per_step_cpt,
            per_step_swaps,
            horizon: time_limit + 1,
        },
    ))
}

/// Squared error against per-record labels, with gradients accumulated in
/// fixed chunks (chunk results combine in order, so the math is identical
/// at any thread count).
fn batch_pass(
    records: &[&TransitionRecord],
    labels: &[f64],
    checkpoint: &PolicyCheckpoint,
) -> Result<(f64, Gradients), TrainError> {
    let topo = &checkpoint.topo;
    let params = &checkpoint.eval;
    let inv_batch = 1.0 / records.len() as f64;
    let chunks: Vec<(usize, usize)> = (0..records.len())
        .step_by(GRAD_CHUNK)
        .map(|lo| (lo, (lo + GRAD_CHUNK).min(records.len())))
        .collect();

    let partials = ordered_map(&chunks, |&(lo, hi)| -> Result<(f64, Gradients), TrainError> {
        let mut grads = Gradients::zeros_like(params);
        let mut loss = 0.0;
        for i in lo..hi {
            let record = records[i];
            let cache = qtot_forward(
                &record.channels_t,
                &record.locals_t,
                &record.actions,
                params,
                topo,
            )?;
            let err = labels[i] - cache.qtot();
            loss += err * err * inv_batch;
            qtot_backward(&cache, -2.0 * err * inv_batch, params, &mut grads, topo);
        }
        Ok((loss, grads))
    });

    let mut total_loss = 0.0;
    let mut total = Gradients::zeros_like(params);
    for partial in partials {
        let (loss, grads) = partial?;
        total_loss += loss;
        total.accumulate(1.0, &grads)?;
    }
    Ok((total_loss, total))
}

fn guard_finite(loss: f64, step: u64) -> Result<(), TrainError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(TrainError::Diverged(format!(
            "non-finite loss {loss} at trainer step {step}"
        )))
    }
}

/// One regression step on the immediate reward: loss = mean
/// (r − Q_tot)², updating all eval nets. No bootstrapping, no targets.
pub fn train_step_dnn(
    records: &[&TransitionRecord],
    checkpoint: &mut PolicyCheckpoint,
    optimizer: &mut RmsProp,
) -> Result<f64, TrainError> {
    let labels: Vec<f64> = records.iter().map(|r| r.reward).collect();
    let (loss, grads) = batch_pass(records, &labels, checkpoint)?;
    guard_finite(loss, checkpoint.step_counter)?;
    optimizer.step(&mut checkpoint.eval, &grads)?;
    checkpoint.step_counter += 1;
    Ok(loss)
}

/// TD target for one record: y = r + γ·te·tgtMixing(s', masked maxima of
/// the target agent net at t+1).
fn td_label(
    record: &TransitionRecord,
    checkpoint: &PolicyCheckpoint,
    gamma: f64,
) -> Result<f64, TrainError> {
    if record.te == 0.0 {
        return Ok(record.reward);
    }
    let topo = &checkpoint.topo;
    let target = &checkpoint.target;
    let s1 = embed(&record.channels_t1, target, topo)?;
    let mut maxima = Vec::with_capacity(record.locals_t1.len());
    for (local, mask) in record.locals_t1.iter().zip(&record.masks_t1) {
        let q = agent_q(&s1, local, target, topo)?;
        maxima.push(masked_max(&q, mask)?);
    }
    let joint = crate::manf::mix(&s1, &maxima, target, topo)?;
    Ok(record.reward + gamma * record.te * joint)
}

/// One TD step: loss = mean (y − Q_tot)² with frozen-target labels, one
/// optimizer update on the eval nets, and a target sync every
/// `sync_period` steps.
pub fn train_step_rl(
    records: &[&TransitionRecord],
    checkpoint: &mut PolicyCheckpoint,
    gamma: f64,
    sync_period: u64,
    optimizer: &mut RmsProp,
) -> Result<f64, TrainError> {
    let chunks: Vec<(usize, usize)> = (0..records.len())
        .step_by(GRAD_CHUNK)
        .map(|lo| (lo, (lo + GRAD_CHUNK).min(records.len())))
        .collect();
    let label_chunks = ordered_map(&chunks, |&(lo, hi)| -> Result<Vec<f64>, TrainError> {
        (lo..hi).map(|i| td_label(records[i], checkpoint, gamma)).collect()
    });
    let mut labels = Vec::with_capacity(records.len());
    for chunk in label_chunks {
        labels.extend(chunk?);
    }

    let (loss, grads) = batch_pass(records, &labels, checkpoint)?;
    guard_finite(loss, checkpoint.step_counter)?;
    optimizer.step(&mut checkpoint.eval, &grads)?;
    checkpoint.step_counter += 1;
    if sync_period > 0 && checkpoint.step_counter % sync_period == 0 {
        checkpoint.sync_targets();
    }
    Ok(loss)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_rate: Option<f64>,
}

pub struct FitResult {
    pub checkpoint: PolicyCheckpoint,
    pub log: Vec<StepLog>,
}

/// Greedy (ε=0) rollout returning the completion rate; used for the
/// periodic evaluation probes.
fn greedy_probe(scenario: &Scenario, checkpoint: &PolicyCheckpoint) -> Result<f64, TrainError> {
    let (mut world, mut agents) = scenario.build()?;
    let initial = world.initial_task_count();
    if initial == 0 {
        return Ok(1.0);
    }
    let topo = &checkpoint.topo;
    let mut completed = initial_completion_sweep(&mut world, &agents).task_cpt;
    for _ in 0..scenario.time_limit {
        let bundle = build_bundle(&world, &agents)?;
        let s = embed(&bundle.channels, &checkpoint.eval, topo)?;
        let mut actions = Vec::with_capacity(agents.len());
        for (local, mask) in bundle.locals.iter().zip(&bundle.masks) {
            let q = agent_q(&s, local, &checkpoint.eval, topo)?;
            actions.push(masked_argmax(&q, mask)?);
        }
        completed += step(&mut world, &mut agents, &actions)?.task_cpt;
    }
    Ok(completed as f64 / initial as f64)
}

struct RunDir {
    dir: PathBuf,
    log: fs::File,
}

impl RunDir {
    fn create(dir: &Path, config: &TrainConfig) -> Result<Self, TrainError> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(config).expect("config serializes"),
        )?;
        let log = fs::File::create(dir.join("log.jsonl"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
        })
    }

    fn append(&mut self, entry: &StepLog) -> Result<(), TrainError> {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        writeln!(self.log, "{line}")?;
        Ok(())
    }

    fn checkpoint(&self, name: &str, ckpt: &PolicyCheckpoint) -> Result<(), TrainError> {
        ckpt.save(&self.dir.join(name))?;
        Ok(())
    }
}

/// The outer training loop: alternate episode collection with one gradient
/// step per collected environment step once the pool holds a batch. Stops
/// at the step budget (or earlier if a greedy evaluation reaches
/// `stop_at_rate`). When `run_dir` is given, writes the config snapshot,
/// a JSONL log, and periodic plus final checkpoints.
pub fn fit(
    config: &TrainConfig,
    source: &ScenarioSource,
    run_dir: Option<&Path>,
) -> Result<FitResult, TrainError> {
    config.validate()?;
    let mut scen_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed_0001));
    let mut act_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed_0002));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed_0003));

    let probe = source.draw(&mut scen_rng.clone())?;
    let topo = NetTopology {
        height: probe.height,
        width: probe.width,
        n_agents: probe.agent_count(),
        embed_dim: config.embed_dim,
        hidden_mult: config.hidden_mult,
        use_cnn: config.use_cnn,
    };
    topo.validate()?;
    let mut checkpoint = PolicyCheckpoint::new(topo, config.seed)?;
    let mut optimizer = RmsProp::new(config.lr);
    let mut replay = ReplayBuffer::new(config.capacity);
    let mut log = Vec::new();
    let reward_mode = config.effective_reward_mode();
    let time_limit = source.time_limit();

    // Evaluation probes reuse the same scenario draws every time so the
    // learning curve is comparable across probes.
    let eval_scenarios: Vec<Scenario> = {
        let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed_0004));
        (0..config.eval_episodes.max(1))
            .map(|_| source.draw(&mut eval_rng))
            .collect::<Result<_, _>>()?
    };

    let mut run = match run_dir {
        Some(dir) => Some(RunDir::create(dir, config)?),
        None => None,
    };

    'outer: while checkpoint.step_counter < config.max_steps {
        let scenario = source.draw(&mut scen_rng)?;
        if scenario.width != checkpoint.topo.width
            || scenario.height != checkpoint.topo.height
            || scenario.agent_count() != checkpoint.topo.n_agents
        {
            return Err(TrainError::Incompatible(format!(
                "scenario {}×{} with {} agents vs topology {}×{} with {}",
                scenario.width,
                scenario.height,
                scenario.agent_count(),
                checkpoint.topo.width,
                checkpoint.topo.height,
                checkpoint.topo.n_agents
            )));
        }
        let (world, agents) = scenario.build()?;
        let epsilon = epsilon_at(checkpoint.step_counter, &config.epsilon);
        let (records, _) = collect_episode(
            world,
            agents,
            &checkpoint,
            time_limit,
            epsilon,
            reward_mode,
            &mut act_rng,
        )?;
        let collected = records.len();
        for record in records {
            replay.push(record);
        }

        for _ in 0..collected {
            if replay.len() < config.batch || checkpoint.step_counter >= config.max_steps {
                break;
            }
            let indices = replay.sample_indices(config.batch, &mut batch_rng);
            let batch: Vec<&TransitionRecord> = indices.iter().map(|&i| replay.get(i)).collect();
            let loss = match config.algorithm {
                Algorithm::Dnn => train_step_dnn(&batch, &mut checkpoint, &mut optimizer)?,
                Algorithm::Rl => train_step_rl(
                    &batch,
                    &mut checkpoint,
                    config.gamma,
                    config.sync_period,
                    &mut optimizer,
                )?,
            };
            let step_no = checkpoint.step_counter;
            let mut entry = StepLog {
                step: step_no,
                loss,
                epsilon,
                eval_rate: None,
            };
            if config.eval_every > 0 && step_no % config.eval_every == 0 {
                let mut total = 0.0;
                for s in &eval_scenarios {
                    total += greedy_probe(s, &checkpoint)?;
                }
                entry.eval_rate = Some(total / eval_scenarios.len() as f64);
            }
            if let Some(run) = run.as_mut() {
                run.append(&entry)?;
                if config.checkpoint_every > 0 && step_no % config.checkpoint_every == 0 {
                    run.checkpoint(&format!("checkpoint_{step_no}.ckpt"), &checkpoint)?;
                }
            }
            let stop = matches!(
                (entry.eval_rate, config.stop_at_rate),
                (Some(rate), Some(threshold)) if rate >= threshold
            );
            log.push(entry);
            if stop {
                break 'outer;
            }
        }
    }

    if let Some(run) = run.as_mut() {
        run.checkpoint("final.ckpt", &checkpoint)?;
    }
    Ok(FitResult { checkpoint, log })
}

/// On-disk training specification: hyperparameters plus the scenario
/// source, with paths resolved against the spec file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    #[serde(flatten)]
    pub config: TrainConfig,
    pub scenario: SourceSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceSpec {
    Recipe { recipe: PathBuf },
    Fixed { scenario: PathBuf },
}

impl TrainSpec {
    pub fn load(path: &Path) -> Result<(TrainConfig, ScenarioSource), TrainError> {
        let text = fs::read_to_string(path)?;
        let spec: TrainSpec = serde_json::from_str(&text)
            .map_err(|e| TrainError::InvalidConfig(format!("train spec parse: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let source = match &spec.scenario {
            SourceSpec::Recipe { recipe } => {
                let recipe_text = fs::read_to_string(resolve(recipe))?;
                ScenarioSource::Recipe(ScenarioRecipe::from_json(&recipe_text)?)
            }
            SourceSpec::Fixed { scenario } => {
                let scenario_text = fs::read_to_string(resolve(scenario))?;
                ScenarioSource::Fixed(Scenario::from_json(&scenario_text)?)
            }
        };
        Ok((spec.config, source))
    }
}
