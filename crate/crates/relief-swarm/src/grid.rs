//! Discrete disaster-area world: the cell lattice, UAV/worker/car agents,
//! movement and battery constraints, task completion, and episode traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-major cell index into a [`GridWorld`].
pub type CellIndex = usize;

/// One destination cell per agent, in uniform agent-numbering order.
pub type JointAction = Vec<CellIndex>;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cell index {index} out of bounds ({cells} cells)")]
    OutOfBounds { index: usize, cells: usize },
    #[error("cell {0} is an obstacle")]
    ObstacleCell(CellIndex),
    #[error("agent {agent} chose cell {cell} outside its action mask")]
    MaskedAction { agent: usize, cell: CellIndex },
    #[error("joint action has {got} entries, expected {expected}")]
    ActionArity { got: usize, expected: usize },
    #[error("completion rate undefined: world has no initial tasks")]
    UndefinedRate,
    #[error("route length {got} does not cover horizon {horizon}")]
    RouteLength { got: usize, horizon: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// One grid cell. A cell never holds both an obstacle and a task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub obst: bool,
    pub task: bool,
}

/// The discrete sensing area.
///
/// Cells are stored row-major; `index = y * width + x`. Distances are
/// center-to-center Euclidean in cell units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    initial_task_count: usize,
}

impl GridWorld {
    /// Builds a world from obstacle and task cell lists. The lists must be
    /// disjoint and in bounds.
    pub fn new(
        width: usize,
        height: usize,
        obstacles: &[CellIndex],
        tasks: &[CellIndex],
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::InvalidScenario("zero grid dimension".into()));
        }
        let n = width * height;
        let mut cells = vec![Cell::default(); n];
        for &o in obstacles {
            if o >= n {
                return Err(GridError::OutOfBounds { index: o, cells: n });
            }
            cells[o].obst = true;
        }
        for &t in tasks {
            if t >= n {
                return Err(GridError::OutOfBounds { index: t, cells: n });
            }
            if cells[t].obst {
                return Err(GridError::InvalidScenario(format!(
                    "cell {t} is both obstacle and task"
                )));
            }
            cells[t].task = true;
        }
        let initial_task_count = cells.iter().filter(|c| c.task).count();
        Ok(Self {
            width,
            height,
            cells,
            initial_task_count,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Task count at t=0, before any completion. Immutable for the episode.
    pub fn initial_task_count(&self) -> usize {
        self.initial_task_count
    }

    pub fn cell(&self, index: CellIndex) -> Result<Cell, GridError> {
        self.cells.get(index).copied().ok_or(GridError::OutOfBounds {
            index,
            cells: self.cells.len(),
        })
    }

    pub fn is_obstacle(&self, index: CellIndex) -> bool {
        self.cells.get(index).is_some_and(|c| c.obst)
    }

    pub fn has_task(&self, index: CellIndex) -> bool {
        self.cells.get(index).is_some_and(|c| c.task)
    }

    pub fn remaining_tasks(&self) -> usize {
        self.cells.iter().filter(|c| c.task).count()
    }

    /// Indices of cells still flagged as tasks, ascending.
    pub fn task_cells(&self) -> Vec<CellIndex> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.task.then_some(i))
            .collect()
    }

    pub fn xy(&self, index: CellIndex) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn index(&self, x: usize, y: usize) -> CellIndex {
        y * self.width + x
    }

    /// Center-to-center Euclidean distance between two cells, in cell units.
    pub fn distance(&self, a: CellIndex, b: CellIndex) -> f64 {
        self.distance_sq(a, b).sqrt()
    }

    fn distance_sq(&self, a: CellIndex, b: CellIndex) -> f64 {
        let (ax, ay) = self.xy(a);
        let (bx, by) = self.xy(b);
        let dx = ax as f64 - bx as f64;
        let dy = ay as f64 - by as f64;
        dx * dx + dy * dy
    }

    fn clear_task(&mut self, index: CellIndex) {
        self.cells[index].task = false;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Uav,
    Worker,
    Car,
}

/// UAV battery state: remaining power fraction and per-step consumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub pow: f64,
    pub csp: f64,
}

/// One agent. Workers and cars carry no battery (infinite power).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub kind: AgentKind,
    /// Position in the uniform agent numbering.
    pub id: usize,
    pub loc: CellIndex,
    pub radius: f64,
    pub battery: Option<Battery>,
}

impl AgentState {
    pub fn uav(id: usize, loc: CellIndex, radius: f64, pow: f64, csp: f64) -> Self {
        Self {
            kind: AgentKind::Uav,
            id,
            loc,
            radius,
            battery: Some(Battery { pow, csp }),
        }
    }

    pub fn worker(id: usize, loc: CellIndex, radius: f64) -> Self {
        Self {
            kind: AgentKind::Worker,
            id,
            loc,
            radius,
            battery: None,
        }
    }

    pub fn car(id: usize, loc: CellIndex, radius: f64) -> Self {
        Self {
            kind: AgentKind::Car,
            id,
            loc,
            radius,
            battery: None,
        }
    }

    fn validate(&self, world: &GridWorld) -> Result<(), GridError> {
        if self.loc >= world.cell_count() {
            return Err(GridError::OutOfBounds {
                index: self.loc,
                cells: world.cell_count(),
            });
        }
        if world.is_obstacle(self.loc) {
            return Err(GridError::ObstacleCell(self.loc));
        }
        match (self.kind, &self.battery) {
            (AgentKind::Uav, Some(b)) => {
                if !(0.0..=1.0).contains(&b.pow) {
                    return Err(GridError::InvalidParameter(format!(
                        "UAV {} power {} outside [0, 1]",
                        self.id, b.pow
                    )));
                }
                if b.csp <= 0.0 || b.csp > 1.0 {
                    return Err(GridError::InvalidParameter(format!(
                        "UAV {} consumption {} outside (0, 1]",
                        self.id, b.csp
                    )));
                }
                Ok(())
            }
            (AgentKind::Uav, None) => Err(GridError::InvalidParameter(format!(
                "UAV {} has no battery",
                self.id
            ))),
            (_, Some(_)) => Err(GridError::InvalidParameter(format!(
                "agent {} of kind {:?} has a battery",
                self.id, self.kind
            ))),
            (_, None) => Ok(()),
        }
    }

    /// True for a UAV whose power no longer covers one step of flight.
    pub fn is_stopped(&self) -> bool {
        match &self.battery {
            Some(b) => b.pow < b.csp,
            None => false,
        }
    }
}

/// Whole steps of flight the given power still covers, tolerant of the
/// float noise left by repeated csp subtraction.
pub(crate) fn flight_steps(pow: f64, csp: f64) -> f64 {
    const GUARD: f64 = 1e-9;
    (pow / csp + GUARD).floor()
}

/// One battery swap: `prev_pow` is the UAV's power before the step resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Swap {
    pub uav_id: usize,
    pub car_id: usize,
    pub prev_pow: f64,
}

/// What one simultaneous move produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Cells whose task completed this step, ascending.
    pub completed_cells: Vec<CellIndex>,
    pub task_cpt: usize,
    /// Sum of per-UAV urgency-mitigation rewards for this step.
    pub mitig_sum: f64,
    pub swaps: Vec<Swap>,
}

/// Cells an agent at `loc` may occupy next step: center distance ≤ radius,
/// not an obstacle. Destination-only (obstacles block occupancy, not
/// transit). Always contains `loc`; ascending order.
pub fn reachable_set(
    world: &GridWorld,
    loc: CellIndex,
    radius: f64,
) -> Result<Vec<CellIndex>, GridError> {
    if loc >= world.cell_count() {
        return Err(GridError::OutOfBounds {
            index: loc,
            cells: world.cell_count(),
        });
    }
    if world.is_obstacle(loc) {
        return Err(GridError::ObstacleCell(loc));
    }
    let (cx, cy) = world.xy(loc);
    let r = radius.max(0.0);
    let rr = r * r;
    let x_lo = cx.saturating_sub(r.floor() as usize);
    let x_hi = (cx + r.floor() as usize).min(world.width() - 1);
    let y_lo = cy.saturating_sub(r.floor() as usize);
    let y_hi = (cy + r.floor() as usize).min(world.height() - 1);
    let mut out = Vec::new();
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let idx = world.index(x, y);
            if world.is_obstacle(idx) {
                continue;
            }
            if world.distance_sq(loc, idx) <= rr {
                out.push(idx);
            }
        }
    }
    Ok(out)
}

/// Legal destinations for an agent. A UAV that cannot afford one step of
/// flight is pinned to its current cell (the empty-range case rendered as a
/// forced stay).
pub fn action_mask(world: &GridWorld, agent: &AgentState) -> Result<Vec<CellIndex>, GridError> {
    agent.validate(world)?;
    if agent.is_stopped() {
        return Ok(vec![agent.loc]);
    }
    reachable_set(world, agent.loc, agent.radius)
}

/// Advances the world by one simultaneous move.
///
/// Pipeline: relocate all agents; complete tasks on cells holding at least
/// one UAV and one worker; compute per-UAV mitigation rewards from pre-step
/// power; then update batteries (swap to full on car co-location, else
/// subtract csp when affordable). Re-validates every action against its
/// mask.
pub fn step(
    world: &mut GridWorld,
    agents: &mut [AgentState],
    joint_action: &[CellIndex],
) -> Result<StepOutcome, GridError> {
    if joint_action.len() != agents.len() {
        return Err(GridError::ActionArity {
            got: joint_action.len(),
            expected: agents.len(),
        });
    }
    for (agent, &cell) in agents.iter().zip(joint_action) {
        let mask = action_mask(world, agent)?;
        if !mask.contains(&cell) {
            return Err(GridError::MaskedAction {
                agent: agent.id,
                cell,
            });
        }
    }

    let prev_pow: Vec<Option<f64>> = agents.iter().map(|a| a.battery.map(|b| b.pow)).collect();
    for (agent, &cell) in agents.iter_mut().zip(joint_action) {
        agent.loc = cell;
    }

    let mut outcome = complete_colocated_tasks(world, agents);

    let car_locs: Vec<(usize, CellIndex)> = agents
        .iter()
        .filter(|a| a.kind == AgentKind::Car)
        .map(|a| (a.id, a.loc))
        .collect();

    for (i, agent) in agents.iter_mut().enumerate() {
        let Some(batt) = agent.battery.as_mut() else {
            continue;
        };
        let prev = prev_pow[i].expect("UAV tracked power");
        let met_car = car_locs
            .iter()
            .filter(|(_, loc)| *loc == agent.loc)
            .map(|(id, _)| *id)
            .min();
        match met_car {
            Some(car_id) => {
                // Eq-13 style mitigation from the pre-step power, then the swap.
                let urge_full = (-flight_steps(1.0, batt.csp)).exp();
                let mitig = if prev < batt.csp {
                    1.0 - urge_full
                } else {
                    (-flight_steps(prev - batt.csp, batt.csp)).exp() - urge_full
                };
                outcome.mitig_sum += mitig;
                outcome.swaps.push(Swap {
                    uav_id: agent.id,
                    car_id,
                    prev_pow: prev,
                });
                batt.pow = 1.0;
            }
            None => {
                if batt.pow >= batt.csp {
                    batt.pow -= batt.csp;
                }
            }
        }
    }
    Ok(outcome)
}

/// Task completion at the current positions: every task cell holding at
/// least one UAV and one worker is cleared and counted.
fn complete_colocated_tasks(world: &mut GridWorld, agents: &[AgentState]) -> StepOutcome {
    let mut completed = Vec::new();
    for (i, cell) in world.cells.iter().enumerate() {
        if !cell.task {
            continue;
        }
        let uav_here = agents
            .iter()
            .any(|a| a.kind == AgentKind::Uav && a.loc == i);
        let worker_here = agents
            .iter()
            .any(|a| a.kind == AgentKind::Worker && a.loc == i);
        if uav_here && worker_here {
            completed.push(i);
        }
    }
    for &c in &completed {
        world.clear_task(c);
    }
    StepOutcome {
        task_cpt: completed.len(),
        completed_cells: completed,
        mitig_sum: 0.0,
        swaps: Vec::new(),
    }
}

/// Applies the t=0 co-location rule before any move: tasks under a UAV and
/// worker pair complete immediately. No battery change, no mitigation.
pub fn initial_completion_sweep(world: &mut GridWorld, agents: &[AgentState]) -> StepOutcome {
    complete_colocated_tasks(world, agents)
}

/// Routes and per-step accounting for one episode of `horizon` moves.
///
/// `per_step_cpt[0]` is the t=0 sweep count; entry `s ≥ 1` counts tasks
/// completed by move `s`. Swap lists line up the same way (`[0]` is empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub routes: Vec<Vec<CellIndex>>,
    pub per_step_cpt: Vec<usize>,
    pub per_step_swaps: Vec<Vec<Swap>>,
    pub horizon: usize,
}

impl EpisodeTrace {
    pub fn total_completed(&self) -> usize {
        self.per_step_cpt.iter().sum()
    }
}

/// Fraction of the initial tasks completed by the trace.
pub fn completion_rate(trace: &EpisodeTrace, world: &GridWorld) -> Result<f64, GridError> {
    if world.initial_task_count() == 0 {
        return Err(GridError::UndefinedRate);
    }
    Ok(trace.total_completed() as f64 / world.initial_task_count() as f64)
}

/// Per-UAV power history: `powers[u][t]` for moments t = 0..=horizon, with
/// matching swap flags (`swapped[u][0]` is always false).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLog {
    pub uav_ids: Vec<usize>,
    pub powers: Vec<Vec<f64>>,
    pub swapped: Vec<Vec<bool>>,
}

/// Re-simulates stored routes through the exact step pipeline, rebuilding
/// the trace and the UAV power history. `world` and `agents` must be the
/// episode's initial state.
pub fn replay_routes(
    world: &GridWorld,
    agents: &[AgentState],
    routes: &[Vec<CellIndex>],
    horizon: usize,
) -> Result<(EpisodeTrace, PowerLog), GridError> {
    if routes.len() != agents.len() {
        return Err(GridError::ActionArity {
            got: routes.len(),
            expected: agents.len(),
        });
    }
    for route in routes {
        if route.len() != horizon + 1 {
            return Err(GridError::RouteLength {
                got: route.len(),
                horizon,
            });
        }
    }
    let mut world = world.clone();
    let mut agents = agents.to_vec();
    for (agent, route) in agents.iter_mut().zip(routes) {
        if agent.loc != route[0] {
            return Err(GridError::InvalidScenario(format!(
                "route for agent {} starts at {} but agent is at {}",
                agent.id, route[0], agent.loc
            )));
        }
    }

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
    let mut per_step_cpt = vec![sweep.task_cpt];
    let mut per_step_swaps = vec![Vec::new()];

    for t in 0..horizon {
        let joint: JointAction = routes.iter().map(|r| r[t + 1]).collect();
        let outcome = step(&mut world, &mut agents, &joint)?;
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
            routes: routes.to_vec(),
            per_step_cpt,
            per_step_swaps,
            horizon,
        },
        PowerLog {
            uav_ids,
            powers,
            swapped,
        },
    ))
}

/// UAV entry in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavSpec {
    pub loc: CellIndex,
    pub radius: f64,
    pub csp: f64,
}

/// Worker or car entry in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoverSpec {
    pub loc: CellIndex,
    pub radius: f64,
}

/// On-disk scenario: grid layout, agent roster, and the episode horizon.
/// UAVs start at full power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub width: usize,
    pub height: usize,
    pub obstacles: Vec<CellIndex>,
    pub tasks: Vec<CellIndex>,
    pub uavs: Vec<UavSpec>,
    pub workers: Vec<MoverSpec>,
    pub cars: Vec<MoverSpec>,
    pub time_limit: usize,
}

impl Scenario {
    /// Instantiates the world and the agent roster in uniform numbering
    /// order (UAVs, then workers, then cars).
    pub fn build(&self) -> Result<(GridWorld, Vec<AgentState>), GridError> {
        let world = GridWorld::new(self.width, self.height, &self.obstacles, &self.tasks)?;
        let mut agents = Vec::with_capacity(self.agent_count());
        for u in &self.uavs {
            agents.push(AgentState::uav(agents.len(), u.loc, u.radius, 1.0, u.csp));
        }
        for w in &self.workers {
            agents.push(AgentState::worker(agents.len(), w.loc, w.radius));
        }
        for c in &self.cars {
            agents.push(AgentState::car(agents.len(), c.loc, c.radius));
        }
        for agent in &agents {
            agent.validate(&world)?;
        }
        Ok((world, agents))
    }

    pub fn agent_count(&self) -> usize {
        self.uavs.len() + self.workers.len() + self.cars.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GridError> {
        serde_json::from_str(text)
            .map_err(|e| GridError::InvalidScenario(format!("scenario parse: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world(w: usize, h: usize) -> GridWorld {
        GridWorld::new(w, h, &[], &[]).unwrap()
    }

    /// Independent reachability oracle: scan every cell, compare hypot
    /// against the radius, drop obstacles.
    fn reachable_oracle(world: &GridWorld, loc: CellIndex, radius: f64) -> Vec<CellIndex> {
        let (cx, cy) = world.xy(loc);
        (0..world.cell_count())
            .filter(|&i| {
                let (x, y) = world.xy(i);
                let d = ((x as f64 - cx as f64).powi(2) + (y as f64 - cy as f64).powi(2)).sqrt();
                d <= radius && !world.is_obstacle(i)
            })
            .collect()
    }

    #[test]
    fn reachable_radius_one_excludes_diagonals() {
        let world = open_world(5, 5);
        let center = world.index(2, 2);
        let got = reachable_set(&world, center, 1.0).unwrap();
        assert_eq!(got, reachable_oracle(&world, center, 1.0));
        assert_eq!(got.len(), 5);
        assert!(got.contains(&center));
    }

    #[test]
    fn reachable_radius_zero_is_self() {
        let world = open_world(7, 3);
        let loc = world.index(4, 1);
        assert_eq!(reachable_set(&world, loc, 0.0).unwrap(), vec![loc]);
    }

    #[test]
    fn reachable_skips_obstacles() {
        let world = GridWorld::new(5, 5, &[13], &[]).unwrap(); // right of center
        let center = 12;
        let got = reachable_set(&world, center, 1.0).unwrap();
        assert_eq!(got, reachable_oracle(&world, center, 1.0));
        assert_eq!(got.len(), 4);
        assert!(!got.contains(&13));
    }

    #[test]
    fn reachable_matches_oracle_on_larger_radii() {
        let world = GridWorld::new(9, 8, &[3, 20, 41, 55], &[]).unwrap();
        for radius in [1.5, 2.0, 3.0, 7.5] {
            let got = reachable_set(&world, 40, radius).unwrap();
            assert_eq!(got, reachable_oracle(&world, 40, radius), "radius {radius}");
        }
    }

    #[test]
    fn reachable_rejects_bad_origin() {
        let world = GridWorld::new(4, 4, &[5], &[]).unwrap();
        assert!(matches!(
            reachable_set(&world, 99, 1.0),
            Err(GridError::OutOfBounds { .. })
        ));
        assert!(matches!(
            reachable_set(&world, 5, 1.0),
            Err(GridError::ObstacleCell(5))
        ));
    }

    #[test]
    fn mask_pins_stopped_uav() {
        let world = open_world(5, 5);
        let uav = AgentState::uav(0, 12, 2.0, 0.2, 0.3);
        assert_eq!(action_mask(&world, &uav).unwrap(), vec![12]);
    }

    #[test]
    fn mask_full_at_exact_power_boundary() {
        let world = open_world(5, 5);
        let uav = AgentState::uav(0, 12, 2.0, 0.3, 0.3);
        let mask = action_mask(&world, &uav).unwrap();
        assert_eq!(mask, reachable_set(&world, 12, 2.0).unwrap());
        assert!(mask.len() > 1);
    }

    #[test]
    fn mask_for_worker_is_reachable_set() {
        let world = open_world(6, 6);
        let worker = AgentState::worker(1, 14, 2.0);
        assert_eq!(
            action_mask(&world, &worker).unwrap(),
            reachable_oracle(&world, 14, 2.0)
        );
    }

    #[test]
    fn step_completes_task_under_uav_worker_pair() {
        let mut world = GridWorld::new(3, 3, &[], &[4]).unwrap();
        let mut agents = vec![
            AgentState::uav(0, 0, 3.0, 1.0, 0.3),
            AgentState::worker(1, 8, 3.0),
        ];
        let outcome = step(&mut world, &mut agents, &[4, 4]).unwrap();
        assert_eq!(outcome.task_cpt, 1);
        assert_eq!(outcome.completed_cells, vec![4]);
        assert!(!world.has_task(4));
        assert_eq!(world.initial_task_count(), 1);
    }

    #[test]
    fn step_drains_battery_without_car() {
        let mut world = open_world(3, 3);
        let mut agents = vec![AgentState::uav(0, 0, 1.0, 0.5, 0.3)];
        step(&mut world, &mut agents, &[1]).unwrap();
        let pow = agents[0].battery.unwrap().pow;
        assert!((pow - 0.2).abs() < 1e-12, "pow = {pow}");
    }

    #[test]
    fn hovering_still_consumes_power() {
        let mut world = open_world(3, 3);
        let mut agents = vec![AgentState::uav(0, 4, 1.0, 0.9, 0.3)];
        step(&mut world, &mut agents, &[4]).unwrap();
        let pow = agents[0].battery.unwrap().pow;
        assert!((pow - 0.6).abs() < 1e-12);
    }

    #[test]
    fn swap_mitigation_for_stranded_uav() {
        // prev pow 0.2 < csp 0.3: mitig = 1 - e^-floor(1/0.3) = 1 - e^-3.
        let mut world = open_world(3, 3);
        let mut agents = vec![
            AgentState::uav(0, 4, 1.0, 0.2, 0.3),
            AgentState::car(1, 4, 2.0),
        ];
        let outcome = step(&mut world, &mut agents, &[4, 4]).unwrap();
        assert!((outcome.mitig_sum - 0.950213).abs() < 1e-6);
        assert_eq!(outcome.swaps.len(), 1);
        assert_eq!(outcome.swaps[0].uav_id, 0);
        assert_eq!(outcome.swaps[0].car_id, 1);
        assert!((outcome.swaps[0].prev_pow - 0.2).abs() < 1e-12);
        assert_eq!(agents[0].battery.unwrap().pow, 1.0);
    }

    #[test]
    fn swap_mitigation_for_flying_uav() {
        // prev pow 0.71, csp 0.3: mitig = e^-floor(0.41/0.3) - e^-3.
        let mut world = open_world(3, 3);
        let mut agents = vec![
            AgentState::uav(0, 0, 2.0, 0.71, 0.3),
            AgentState::car(1, 2, 2.0),
        ];
        let outcome = step(&mut world, &mut agents, &[1, 1]).unwrap();
        assert!((outcome.mitig_sum - 0.318092).abs() < 1e-6);
        assert_eq!(agents[0].battery.unwrap().pow, 1.0);
    }

    #[test]
    fn single_swap_with_two_cars_on_cell() {
        let mut world = open_world(3, 3);
        let mut agents = vec![
            AgentState::uav(0, 0, 2.0, 0.71, 0.3),
            AgentState::car(1, 2, 2.0),
            AgentState::car(2, 4, 2.0),
        ];
        let outcome = step(&mut world, &mut agents, &[1, 1, 1]).unwrap();
        assert_eq!(outcome.swaps.len(), 1);
        assert_eq!(outcome.swaps[0].car_id, 1, "lowest car id recorded");
        assert!((outcome.mitig_sum - 0.318092).abs() < 1e-6);
    }

    #[test]
    fn step_rejects_out_of_mask_action() {
        let mut world = open_world(5, 5);
        let mut agents = vec![AgentState::uav(0, 0, 1.0, 1.0, 0.3)];
        let err = step(&mut world, &mut agents, &[24]).unwrap_err();
        assert!(matches!(err, GridError::MaskedAction { agent: 0, cell: 24 }));
    }

    #[test]
    fn stopped_uav_cannot_move() {
        let mut world = open_world(3, 3);
        let mut agents = vec![AgentState::uav(0, 4, 2.0, 0.1, 0.3)];
        let err = step(&mut world, &mut agents, &[5]).unwrap_err();
        assert!(matches!(err, GridError::MaskedAction { agent: 0, cell: 5 }));
        // Forced stay keeps the power untouched.
        step(&mut world, &mut agents, &[4]).unwrap();
        assert!((agents[0].battery.unwrap().pow - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sweep_completes_initial_colocation() {
        let mut world = GridWorld::new(1, 1, &[], &[0]).unwrap();
        let agents = vec![
            AgentState::uav(0, 0, 0.0, 1.0, 0.5),
            AgentState::worker(1, 0, 0.0),
        ];
        let outcome = initial_completion_sweep(&mut world, &agents);
        assert_eq!(outcome.task_cpt, 1);
        assert_eq!(outcome.mitig_sum, 0.0);
        assert!(outcome.swaps.is_empty());
        assert_eq!(world.remaining_tasks(), 0);
    }

    #[test]
    fn sweep_requires_both_kinds() {
        let mut world = GridWorld::new(2, 2, &[], &[0, 3]).unwrap();
        let agents = vec![
            AgentState::uav(0, 0, 1.0, 1.0, 0.5),
            AgentState::worker(1, 1, 1.0),
        ];
        let outcome = initial_completion_sweep(&mut world, &agents);
        assert_eq!(outcome.task_cpt, 0);
        assert_eq!(world.remaining_tasks(), 2);
    }

    #[test]
    fn completion_rate_from_counts() {
        let world = GridWorld::new(12, 10, &[], &(0..120).collect::<Vec<_>>()).unwrap();
        let trace = EpisodeTrace {
            routes: vec![vec![120, 120]],
            per_step_cpt: vec![0, 43],
            per_step_swaps: vec![vec![], vec![]],
            horizon: 1,
        };
        let rate = completion_rate(&trace, &world).unwrap();
        assert!((rate - 43.0 / 120.0).abs() < 1e-15);
        assert!((rate - 0.3583).abs() < 1e-4);
    }

    #[test]
    fn completion_rate_zero_tasks_is_error() {
        let world = open_world(2, 2);
        let trace = EpisodeTrace {
            routes: vec![vec![0]],
            per_step_cpt: vec![0],
            per_step_swaps: vec![vec![]],
            horizon: 0,
        };
        assert!(matches!(
            completion_rate(&trace, &world),
            Err(GridError::UndefinedRate)
        ));
    }

    #[test]
    fn scenario_round_trip_and_build() {
        let scenario = Scenario {
            width: 4,
            height: 4,
            obstacles: vec![5],
            tasks: vec![10, 3],
            uavs: vec![UavSpec {
                loc: 0,
                radius: 2.0,
                csp: 0.3,
            }],
            workers: vec![MoverSpec { loc: 1, radius: 1.0 }],
            cars: vec![MoverSpec { loc: 15, radius: 2.0 }],
            time_limit: 4,
        };
        let text = scenario.to_json();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(scenario, back);
        let (world, agents) = back.build().unwrap();
        assert_eq!(world.initial_task_count(), 2);
        assert_eq!(agents.len(), 3);
        assert_eq!(agents[0].kind, AgentKind::Uav);
        assert_eq!(agents[0].battery.unwrap().pow, 1.0);
        assert_eq!(agents[2].kind, AgentKind::Car);
        assert_eq!(
            agents.iter().map(|a| a.id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn scenario_rejects_task_on_obstacle() {
        assert!(GridWorld::new(3, 3, &[4], &[4]).is_err());
    }

    #[test]
    fn replay_reproduces_step_counts_and_powers() {
        let scenario = Scenario {
            width: 4,
            height: 4,
            obstacles: vec![],
            tasks: vec![6, 9],
            uavs: vec![UavSpec {
                loc: 0,
                radius: 3.0,
                csp: 0.4,
            }],
            workers: vec![MoverSpec { loc: 15, radius: 3.0 }],
            cars: vec![MoverSpec { loc: 12, radius: 3.0 }],
            time_limit: 3,
        };
        let (world, agents) = scenario.build().unwrap();
        let routes = vec![vec![0, 6, 9, 9], vec![15, 6, 9, 9], vec![12, 12, 9, 12]];
        let (trace, log) = replay_routes(&world, &agents, &routes, 3).unwrap();
        assert_eq!(trace.per_step_cpt, vec![0, 1, 1, 0]);
        assert_eq!(trace.total_completed(), 2);
        // Move 1 drains, move 2 swaps at cell 9, move 3 drains again.
        assert_eq!(log.powers[0].len(), 4);
        assert!((log.powers[0][1] - 0.6).abs() < 1e-12);
        assert_eq!(log.powers[0][2], 1.0);
        assert!(log.swapped[0][2]);
        assert!((log.powers[0][3] - 0.6).abs() < 1e-12);
        // Replaying the same routes is deterministic.
        let (trace2, _) = replay_routes(&world, &agents, &routes, 3).unwrap();
        assert_eq!(trace, trace2);
    }
}
