//! Scenario recipes and seeded instance generation, including the
//! density-grid hook that stands in for check-in data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellIndex, MoverSpec, Scenario, UavSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("infeasible recipe: {0}")]
    Infeasible(String),
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("density grid: {0}")]
    BadDensity(String),
}

/// A fixed value or a uniform-draw interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueSpec {
    Fixed(f64),
    Range([f64; 2]),
}

impl ValueSpec {
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            ValueSpec::Fixed(v) => v,
            ValueSpec::Range([lo, hi]) => {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            ValueSpec::Fixed(v) => (v, v),
            ValueSpec::Range([lo, hi]) => (lo, hi),
        }
    }

    fn validate(&self, name: &str) -> Result<(), ScenarioError> {
        let (lo, hi) = self.bounds();
        if lo > hi {
            return Err(ScenarioError::InvalidRecipe(format!(
                "{name} interval [{lo}, {hi}] is not ordered"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskPlacement {
    Random,
    Checkin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPlacement {
    Same,
    Random,
    Checkin,
}

/// Everything needed to sample one scenario instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecipe {
    pub width: usize,
    pub height: usize,
    pub obstacles: usize,
    pub tasks: usize,
    pub task_placement: TaskPlacement,
    pub uavs: usize,
    pub workers: usize,
    pub cars: usize,
    pub start_placement: StartPlacement,
    pub uav_radius: ValueSpec,
    pub worker_radius: ValueSpec,
    pub car_radius: ValueSpec,
    pub csp: ValueSpec,
    pub time_limit: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ScenarioRecipe {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let cells = self.width * self.height;
        if self.width == 0 || self.height == 0 {
            return Err(ScenarioError::InvalidRecipe("zero grid dimension".into()));
        }
        if self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(ScenarioError::InvalidRecipe(format!(
                "grid dims must be even for the conv extractor, got {}×{}",
                self.width, self.height
            )));
        }
        if self.obstacles + self.tasks > cells {
            return Err(ScenarioError::Infeasible(format!(
                "{} obstacles + {} tasks exceed {cells} cells",
                self.obstacles, self.tasks
            )));
        }
        if self.obstacles >= cells {
            return Err(ScenarioError::Infeasible(
                "no free cell left for agents".into(),
            ));
        }
        for (name, spec) in [
            ("uav_radius", &self.uav_radius),
            ("worker_radius", &self.worker_radius),
            ("car_radius", &self.car_radius),
            ("csp", &self.csp),
        ] {
            spec.validate(name)?;
        }
        let (lo, hi) = self.csp.bounds();
        if lo <= 0.0 || hi > 1.0 {
            return Err(ScenarioError::InvalidRecipe(format!(
                "csp must lie in (0, 1], got [{lo}, {hi}]"
            )));
        }
        if self.uavs + self.workers + self.cars == 0 {
            return Err(ScenarioError::InvalidRecipe("no agents".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let recipe: Self = serde_json::from_str(text)
            .map_err(|e| ScenarioError::InvalidRecipe(format!("recipe parse: {e}")))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }
}

/// Normalized task/agent placement weights over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl DensityGrid {
    /// Validates and normalizes raw weights.
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self, ScenarioError> {
        if weights.len() != height * width {
            return Err(ScenarioError::BadDensity(format!(
                "{} weights for a {height}×{width} grid",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
            return Err(ScenarioError::BadDensity(format!("bad weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ScenarioError::BadDensity("zero total mass".into()));
        }
        Ok(Self {
            height,
            width,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Zeroes the given cells and renormalizes.
    pub fn masked(&self, blocked: &[CellIndex]) -> Result<Self, ScenarioError> {
        let mut weights = self.weights.clone();
        for &b in blocked {
            if b < weights.len() {
                weights[b] = 0.0;
            }
        }
        Self::new(self.height, self.width, weights)
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Parses a density-grid JSON document and checks it against the recipe
/// dimensions.
pub fn load_density(text: &str, recipe: &ScenarioRecipe) -> Result<DensityGrid, ScenarioError> {
    #[derive(Deserialize)]
    struct Raw {
        height: usize,
        width: usize,
        weights: Vec<f64>,
    }
    let raw: Raw = serde_json::from_str(text)
        .map_err(|e| ScenarioError::BadDensity(format!("density parse: {e}")))?;
    if raw.height != recipe.height || raw.width != recipe.width {
        return Err(ScenarioError::BadDensity(format!(
            "density {}×{} vs recipe {}×{}",
            raw.height, raw.width, recipe.height, recipe.width
        )));
    }
    DensityGrid::new(raw.height, raw.width, raw.weights)
}

/// Synthetic stand-in for check-in data: a seeded mixture of Gaussian
/// bumps, normalized over the grid.
pub fn synth_density(width: usize, height: usize, seed: u64) -> DensityGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps = 3;
    let mut weights = vec![1e-6; width * height];
    for _ in 0..bumps {
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let sigma = rng.gen_range(0.8..1.8) * (width.max(height) as f64 / 6.0);
        let amp = rng.gen_range(0.5..1.0);
        for y in 0..height {
            for x in 0..width {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                weights[y * width + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    DensityGrid::new(height, width, weights).expect("synthetic density is positive")
}

fn uniform_without_replacement(
    pool: &[CellIndex],
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<CellIndex>, ScenarioError> {
    if count > pool.len() {
        return Err(ScenarioError::Infeasible(format!(
            "need {count} cells, only {} available",
            pool.len()
        )));
    }
    let mut pool = pool.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.gen_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    Ok(out)
}

fn weighted_without_replacement(
    density: &DensityGrid,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<CellIndex>, ScenarioError> {
    let mut weights = density.weights.clone();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ScenarioError::Infeasible(format!(
                "density exhausted after {} of {count} draws",
                out.len()
            )));
        }
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = weights.len() - 1;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            u -= w;
            if u <= 0.0 {
                chosen = i;
                break;
            }
        }
        weights[chosen] = 0.0;
        out.push(chosen);
    }
    Ok(out)
}

fn weighted_draw(density: &DensityGrid, rng: &mut impl Rng) -> CellIndex {
    let total = density.total();
    let mut u = rng.gen::<f64>() * total;
    let mut chosen = 0;
    for (i, &w) in density.weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        chosen = i;
        u -= w;
        if u <= 0.0 {
            break;
        }
    }
    chosen
}

/// Samples one scenario from the recipe. All randomness flows from `seed`;
/// `density` backs check-in placement (a synthetic mixture is used when
/// none is supplied). UAVs start at full power.
pub fn generate(
    recipe: &ScenarioRecipe,
    seed: u64,
    density: Option<&DensityGrid>,
) -> Result<Scenario, ScenarioError> {
    recipe.validate()?;
    if let Some(d) = density {
        if d.height != recipe.height || d.width != recipe.width {
            return Err(ScenarioError::BadDensity(format!(
                "density {}×{} vs recipe {}×{}",
                d.height, d.width, recipe.height, recipe.width
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = recipe.width * recipe.height;
    let all: Vec<CellIndex> = (0..cells).collect();
    let obstacles = {
        let mut o = uniform_without_replacement(&all, recipe.obstacles, &mut rng)?;
        o.sort_unstable();
        o
    };
    let free: Vec<CellIndex> = (0..cells).filter(|c| !obstacles.contains(c)).collect();

    let needs_density = recipe.task_placement == TaskPlacement::Checkin
        || recipe.start_placement == StartPlacement::Checkin;
    let synth;
    let masked_density = if needs_density {
        let base = match density {
            Some(d) => d,
            None => {
                synth = synth_density(recipe.width, recipe.height, seed);
                &synth
            }
        };
        Some(base.masked(&obstacles)?)
    } else {
        None
    };

    let tasks = {
        let mut t = match recipe.task_placement {
            TaskPlacement::Random => uniform_without_replacement(&free, recipe.tasks, &mut rng)?,
            TaskPlacement::Checkin => weighted_without_replacement(
                masked_density.as_ref().expect("density prepared"),
                recipe.tasks,
                &mut rng,
            )?,
        };
        t.sort_unstable();
        t
    };

    let total_agents = recipe.uavs + recipe.workers + recipe.cars;
    let starts: Vec<CellIndex> = match recipe.start_placement {
        StartPlacement::Same => {
            let cell = free[rng.gen_range(0..free.len())];
            vec![cell; total_agents]
        }
        StartPlacement::Random => (0..total_agents)
            .map(|_| free[rng.gen_range(0..free.len())])
            .collect(),
        StartPlacement::Checkin => {
            let d = masked_density.as_ref().expect("density prepared");
            (0..total_agents).map(|_| weighted_draw(d, &mut rng)).collect()
        }
    };

    let mut uavs = Vec::with_capacity(recipe.uavs);
    for i in 0..recipe.uavs {
        uavs.push(UavSpec {
            loc: starts[i],
            radius: recipe.uav_radius.draw(&mut rng),
            csp: recipe.csp.draw(&mut rng),
        });
    }
    let mut workers = Vec::with_capacity(recipe.workers);
    for i in 0..recipe.workers {
        workers.push(MoverSpec {
            loc: starts[recipe.uavs + i],
            radius: recipe.worker_radius.draw(&mut rng),
        });
    }
    let mut cars = Vec::with_capacity(recipe.cars);
    for i in 0..recipe.cars {
        cars.push(MoverSpec {
            loc: starts[recipe.uavs + recipe.workers + i],
            radius: recipe.car_radius.draw(&mut rng),
        });
    }

    Ok(Scenario {
        width: recipe.width,
        height: recipe.height,
        obstacles,
        tasks,
        uavs,
        workers,
        cars,
        time_limit: recipe.time_limit,
    })
}
