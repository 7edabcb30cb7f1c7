//! Exhaustive optimal-plan oracle for tiny instances. The underlying
//! problem is NP-hard, so hard guards keep it at desk scale.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    action_mask, initial_completion_sweep, step, AgentState, CellIndex, GridError, GridWorld,
    JointAction, Scenario,
};

/// Joint branching factor allowed per expanded state.
const MAX_BRANCHING: u64 = 1_000_000;
/// Deepest horizon the oracle accepts.
const MAX_HORIZON: usize = 4;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Optimal completion count, one optimal plan, and search effort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub optimal: usize,
    /// Joint actions for moves 1..=horizon.
    pub plan: Vec<JointAction>,
    pub nodes: u64,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct StateKey {
    locs: Vec<u16>,
    /// Powers quantized to 1e-9; exact at these csp scales.
    pows: Vec<u64>,
    tasks: Vec<u64>,
    t: u8,
}

fn state_key(world: &GridWorld, agents: &[AgentState], t: usize) -> StateKey {
    let locs = agents.iter().map(|a| a.loc as u16).collect();
    let pows = agents
        .iter()
        .filter_map(|a| a.battery.map(|b| (b.pow * 1e9).round() as u64))
        .collect();
    let mut tasks = vec![0u64; world.cell_count().div_ceil(64)];
    for cell in world.task_cells() {
        tasks[cell / 64] |= 1 << (cell % 64);
    }
    StateKey {
        locs,
        pows,
        tasks,
        t: t as u8,
    }
}

struct Search {
    horizon: usize,
    memo: HashMap<StateKey, (usize, JointAction)>,
    nodes: u64,
}

impl Search {
    /// Best completion count achievable from this state in the remaining
    /// moves, plus the first joint action of one optimal continuation.
    fn explore(
        &mut self,
        world: &GridWorld,
        agents: &[AgentState],
        t: usize,
    ) -> Result<(usize, JointAction), OracleError> {
        if t == self.horizon {
            return Ok((0, Vec::new()));
        }
        let key = state_key(world, agents, t);
        if let Some(hit) = self.memo.get(&key) {
            return Ok(hit.clone());
        }
        self.nodes += 1;

        let masks: Vec<Vec<CellIndex>> = agents
            .iter()
            .map(|a| action_mask(world, a))
            .collect::<Result<_, _>>()?;
        let branching = masks.iter().map(|m| m.len() as u64).try_fold(1u64, |acc, n| {
            acc.checked_mul(n).filter(|&b| b <= MAX_BRANCHING)
        });
        if branching.is_none() {
            return Err(OracleError::InstanceTooLarge(format!(
                "joint branching exceeds {MAX_BRANCHING} at depth {t}"
            )));
        }

        let mut best = 0usize;
        let mut best_action: JointAction = masks.iter().map(|m| m[0]).collect();
        let mut cursor = vec![0usize; masks.len()];
        loop {
            let joint: JointAction = cursor.iter().zip(&masks).map(|(&i, m)| m[i]).collect();
            let mut w = world.clone();
            let mut ag = agents.to_vec();
            let outcome = step(&mut w, &mut ag, &joint)?;
            let (tail, _) = self.explore(&w, &ag, t + 1)?;
            let total = outcome.task_cpt + tail;
            if total > best {
                best = total;
                best_action = joint;
            }
            // Odometer over the joint action space.
            let mut dim = 0;
            loop {
                if dim == cursor.len() {
                    let result = (best, best_action);
                    self.memo.insert(key, result.clone());
                    return Ok(result);
                }
                cursor[dim] += 1;
                if cursor[dim] < masks[dim].len() {
                    break;
                }
                cursor[dim] = 0;
                dim += 1;
            }
        }
    }
}

/// Depth-first enumeration of every joint-action sequence through the
/// exact environment step, memoized on (locations, powers, task bitmap,
/// depth). The returned optimum includes any t=0 sweep completions.
pub fn solve_exact(scenario: &Scenario, horizon: usize) -> Result<OracleResult, OracleError> {
    if horizon > MAX_HORIZON {
        return Err(OracleError::InstanceTooLarge(format!(
            "horizon {horizon} exceeds {MAX_HORIZON}"
        )));
    }
    let (mut world, agents) = scenario.build()?;
    let sweep = initial_completion_sweep(&mut world, &agents);

    let mut search = Search {
        horizon,
        memo: HashMap::new(),
        nodes: 0,
    };
    search.explore(&world, &agents, 0)?;

    // Walk the memo to extract one optimal plan.
    let mut plan = Vec::with_capacity(horizon);
    let mut w = world.clone();
    let mut ag = agents.clone();
    let mut moves_best = 0;
    for t in 0..horizon {
        let key = state_key(&w, &ag, t);
        let (best, action) = search.memo.get(&key).expect("explored state").clone();
        if t == 0 {
            moves_best = best;
        }
        step(&mut w, &mut ag, &action)?;
        plan.push(action);
    }

    Ok(OracleResult {
        optimal: sweep.task_cpt + moves_best,
        plan,
        nodes: search.nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{replay_routes, MoverSpec, UavSpec};

    fn tiny(tasks: Vec<CellIndex>, horizon: usize) -> Scenario {
        Scenario {
            width: 2,
            height: 2,
            obstacles: vec![],
            tasks,
            uavs: vec![UavSpec {
                loc: 0,
                radius: 2.0,
                csp: 0.5,
            }],
            workers: vec![MoverSpec { loc: 0, radius: 2.0 }],
            cars: vec![],
            time_limit: horizon,
        }
    }

    #[test]
    fn one_task_one_move() {
        let scenario = tiny(vec![3], 1);
        let result = solve_exact(&scenario, 1).unwrap();
        assert_eq!(result.optimal, 1);
        assert_eq!(result.plan.len(), 1);
        assert!(result.nodes >= 1);
    }

    #[test]
    fn no_tasks_means_zero() {
        let scenario = tiny(vec![], 3);
        let result = solve_exact(&scenario, 3).unwrap();
        assert_eq!(result.optimal, 0);
    }

    #[test]
    fn replaying_the_plan_reproduces_the_optimum() {
        let scenario = Scenario {
            width: 4,
            height: 4,
            obstacles: vec![5],
            tasks: vec![3, 9, 12],
            uavs: vec![UavSpec {
                loc: 0,
                radius: 1.5,
                csp: 0.5,
            }],
            workers: vec![MoverSpec { loc: 1, radius: 1.5 }],
            cars: vec![MoverSpec { loc: 15, radius: 1.5 }],
            time_limit: 3,
        };
        let result = solve_exact(&scenario, 3).unwrap();
        let (world, agents) = scenario.build().unwrap();
        let mut routes: Vec<Vec<CellIndex>> =
            agents.iter().map(|a| vec![a.loc]).collect();
        for joint in &result.plan {
            for (route, &cell) in routes.iter_mut().zip(joint) {
                route.push(cell);
            }
        }
        let (trace, _) = replay_routes(&world, &agents, &routes, 3).unwrap();
        assert_eq!(trace.total_completed(), result.optimal);
    }

    #[test]
    fn sweep_counts_toward_the_optimum() {
        // UAV and worker both start on the single task cell.
        let mut scenario = tiny(vec![0], 1);
        scenario.time_limit = 1;
        let result = solve_exact(&scenario, 1).unwrap();
        assert_eq!(result.optimal, 1);
    }

    #[test]
    fn horizon_guard_fires() {
        let scenario = tiny(vec![3], 1);
        assert!(matches!(
            solve_exact(&scenario, 5),
            Err(OracleError::InstanceTooLarge(_))
        ));
    }

    #[test]
    fn branching_guard_fires() {
        let scenario = Scenario {
            width: 16,
            height: 16,
            obstacles: vec![],
            tasks: vec![7],
            uavs: (0..4)
                .map(|i| UavSpec {
                    loc: i,
                    radius: 8.0,
                    csp: 0.3,
                })
                .collect(),
            workers: (0..4).map(|i| MoverSpec { loc: 16 + i, radius: 8.0 }).collect(),
            cars: vec![],
            time_limit: 2,
        };
        assert!(matches!(
            solve_exact(&scenario, 2),
            Err(OracleError::InstanceTooLarge(_))
        ));
    }
}
