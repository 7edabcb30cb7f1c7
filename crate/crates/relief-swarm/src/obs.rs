//! State assembly: the five global channel grids, per-agent local features,
//! and action masks.

use serde::{Deserialize, Serialize};

use crate::grid::{action_mask, AgentKind, AgentState, CellIndex, GridError, GridWorld};

pub const CHANNELS: usize = 5;
pub const CH_OBST: usize = 0;
pub const CH_TASK: usize = 1;
pub const CH_URGE: usize = 2;
pub const CH_WORK: usize = 3;
pub const CH_CAR: usize = 4;

/// The five height×width grids of global information, channel-major
/// row-major (`data[(ch * height + y) * width + x]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalChannels {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GlobalChannels {
    fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; CHANNELS * height * width],
        }
    }

    pub fn get(&self, channel: usize, cell: CellIndex) -> f64 {
        self.data[channel * self.height * self.width + cell]
    }

    fn add(&mut self, channel: usize, cell: CellIndex, value: f64) {
        self.data[channel * self.height * self.width + cell] += value;
    }

    /// Sum over all cells of one channel.
    pub fn channel_sum(&self, channel: usize) -> f64 {
        let n = self.height * self.width;
        self.data[channel * n..(channel + 1) * n].iter().sum()
    }
}

/// Compact per-agent local information. One-hot encodings are materialized
/// on demand when assembling network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFeatures {
    pub loc: CellIndex,
    /// Index in the uniform agent numbering; the one-hot identity slot.
    pub agent_index: usize,
    pub urge: f64,
}

impl LocalFeatures {
    pub fn loc_onehot(&self, cells: usize) -> Vec<f64> {
        let mut v = vec![0.0; cells];
        v[self.loc] = 1.0;
        v
    }

    pub fn id_onehot(&self, agent_count: usize) -> Vec<f64> {
        let mut v = vec![0.0; agent_count];
        v[self.agent_index] = 1.0;
        v
    }
}

/// Everything a planner needs at one moment: channels, per-agent local
/// features, and per-agent action masks, keyed by the uniform numbering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBundle {
    pub channels: GlobalChannels,
    pub locals: Vec<LocalFeatures>,
    pub masks: Vec<Vec<CellIndex>>,
}

/// Battery-replacement urgency: 1/e^floor(pow/csp) for UAVs, 0 for workers
/// and cars.
pub fn urgency(pow: f64, csp: f64, kind: AgentKind) -> Result<f64, GridError> {
    match kind {
        AgentKind::Uav => {
            if csp <= 0.0 {
                return Err(GridError::InvalidParameter(format!(
                    "urgency needs csp > 0, got {csp}"
                )));
            }
            Ok((-crate::grid::flight_steps(pow, csp)).exp())
        }
        AgentKind::Worker | AgentKind::Car => Ok(0.0),
    }
}

/// Urgency of a validated agent.
pub fn urgency_of(agent: &AgentState) -> f64 {
    match &agent.battery {
        Some(b) => (-crate::grid::flight_steps(b.pow, b.csp)).exp(),
        None => 0.0,
    }
}

/// Builds the five global channels for the current world and roster.
pub fn build_global(world: &GridWorld, agents: &[AgentState]) -> GlobalChannels {
    let mut ch = GlobalChannels::zeros(world.height(), world.width());
    for i in 0..world.cell_count() {
        let cell = world.cell(i).expect("index in range");
        if cell.obst {
            ch.add(CH_OBST, i, 1.0);
        }
        if cell.task {
            ch.add(CH_TASK, i, 1.0);
        }
    }
    for agent in agents {
        match agent.kind {
            AgentKind::Uav => ch.add(CH_URGE, agent.loc, urgency_of(agent)),
            AgentKind::Worker => ch.add(CH_WORK, agent.loc, 1.0),
            AgentKind::Car => ch.add(CH_CAR, agent.loc, 1.0),
        }
    }
    ch
}

/// Assembles channels, local features, and masks for every agent. The conv
/// embedding is applied later by the network stack, so raw channels can be
/// stored in replay.
pub fn build_bundle(
    world: &GridWorld,
    agents: &[AgentState],
) -> Result<ObservationBundle, GridError> {
    let channels = build_global(world, agents);
    let mut locals = Vec::with_capacity(agents.len());
    let mut masks = Vec::with_capacity(agents.len());
    for agent in agents {
        locals.push(LocalFeatures {
            loc: agent.loc,
            agent_index: agent.id,
            urge: urgency_of(agent),
        });
        masks.push(action_mask(world, agent)?);
    }
    Ok(ObservationBundle {
        channels,
        locals,
        masks,
    })
}
