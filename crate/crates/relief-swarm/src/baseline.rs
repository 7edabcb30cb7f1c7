//! Non-learning comparators: the sequential distance-greedy planner and a
//! uniform-random masked policy.

use rand::Rng;

use crate::grid::{action_mask, AgentKind, AgentState, CellIndex, GridError, GridWorld, JointAction};

/// Picks the masked cell minimizing `objective`; ties go to the lowest
/// cell index (masks are ascending, strict less keeps the first).
fn argmin_cell(mask: &[CellIndex], mut objective: impl FnMut(CellIndex) -> f64) -> CellIndex {
    let mut best = mask[0];
    let mut best_val = objective(best);
    for &cell in &mask[1..] {
        let v = objective(cell);
        if v < best_val {
            best = cell;
            best_val = v;
        }
    }
    best
}

/// One step of the sequential greedy planner: UAVs and workers move toward
/// the remaining tasks (minimum summed Euclidean distance over their
/// masks), then cars move toward the UAVs' already-chosen next locations.
/// With no tasks left the empty sum ties everything and the lowest-index
/// cell wins.
pub fn greedy_step(world: &GridWorld, agents: &[AgentState]) -> Result<JointAction, GridError> {
    let tasks = world.task_cells();
    let mut plan = vec![0; agents.len()];
    let mut uav_next = Vec::new();

    for agent in agents.iter().filter(|a| a.kind == AgentKind::Uav) {
        let mask = action_mask(world, agent)?;
        let choice = argmin_cell(&mask, |cell| {
            tasks.iter().map(|&t| world.distance(cell, t)).sum()
        });
        plan[agent.id] = choice;
        uav_next.push(choice);
    }
    for agent in agents.iter().filter(|a| a.kind == AgentKind::Worker) {
        let mask = action_mask(world, agent)?;
        plan[agent.id] = argmin_cell(&mask, |cell| {
            tasks.iter().map(|&t| world.distance(cell, t)).sum()
        });
    }
    for agent in agents.iter().filter(|a| a.kind == AgentKind::Car) {
        let mask = action_mask(world, agent)?;
        plan[agent.id] = argmin_cell(&mask, |cell| {
            uav_next.iter().map(|&u| world.distance(cell, u)).sum()
        });
    }
    Ok(plan)
}

/// Independent uniform draws from each mask.
pub fn random_step(masks: &[Vec<CellIndex>], rng: &mut impl Rng) -> JointAction {
    masks
        .iter()
        .map(|mask| mask[rng.gen_range(0..mask.len())])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uav_moves_onto_reachable_task() {
        let world = GridWorld::new(5, 5, &[], &[7]).unwrap();
        let agents = vec![AgentState::uav(0, 12, 1.0, 1.0, 0.3)];
        // Brute-force check: 7 is in the mask and has distance sum 0.
        let plan = greedy_step(&world, &agents).unwrap();
        assert_eq!(plan, vec![7]);
    }

    #[test]
    fn no_tasks_falls_back_to_lowest_index() {
        let world = GridWorld::new(4, 4, &[], &[]).unwrap();
        let agents = vec![
            AgentState::uav(0, 5, 1.5, 1.0, 0.3),
            AgentState::worker(1, 10, 1.5),
        ];
        let plan = greedy_step(&world, &agents).unwrap();
        let uav_mask = action_mask(&world, &agents[0]).unwrap();
        let worker_mask = action_mask(&world, &agents[1]).unwrap();
        assert_eq!(plan[0], uav_mask[0]);
        assert_eq!(plan[1], worker_mask[0]);
    }

    #[test]
    fn car_chases_uav_next_location() {
        let world = GridWorld::new(5, 5, &[], &[14]).unwrap();
        let agents = vec![
            AgentState::uav(0, 12, 2.0, 1.0, 0.3),
            AgentState::car(1, 10, 4.0),
        ];
        let plan = greedy_step(&world, &agents).unwrap();
        assert_eq!(plan[0], 14, "UAV heads for the task");
        assert_eq!(plan[1], 14, "car heads for the UAV's next cell");
    }

    #[test]
    fn stopped_uav_contributes_forced_location() {
        let world = GridWorld::new(5, 5, &[], &[24]).unwrap();
        let agents = vec![
            AgentState::uav(0, 6, 2.0, 0.1, 0.3), // pinned at 6
            AgentState::car(1, 8, 2.0),
        ];
        let plan = greedy_step(&world, &agents).unwrap();
        assert_eq!(plan[0], 6);
        assert_eq!(plan[1], 6, "car minimizes distance to the stuck UAV");
    }

    #[test]
    fn greedy_is_deterministic_and_in_mask() {
        let world = GridWorld::new(6, 6, &[8, 21], &[3, 17, 30]).unwrap();
        let agents = vec![
            AgentState::uav(0, 0, 2.5, 1.0, 0.3),
            AgentState::worker(1, 35, 2.0),
            AgentState::car(2, 18, 3.0),
        ];
        let a = greedy_step(&world, &agents).unwrap();
        let b = greedy_step(&world, &agents).unwrap();
        assert_eq!(a, b);
        for (agent, &cell) in agents.iter().zip(&a) {
            assert!(action_mask(&world, agent).unwrap().contains(&cell));
        }
    }

    #[test]
    fn random_step_is_seeded_and_masked() {
        let masks = vec![vec![0, 1, 2], vec![5], vec![3, 9]];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_step(&masks, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = random_step(&masks, &mut rng);
        assert_eq!(a, b);
        assert_eq!(a[1], 5, "singleton mask is forced");
        assert!(masks[0].contains(&a[0]) && masks[2].contains(&a[2]));
    }

    #[test]
    fn random_step_looks_uniform() {
        let masks = vec![vec![0, 1, 2, 3, 4]];
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts = [0usize; 5];
        let draws = 10_000;
        for _ in 0..draws {
            counts[random_step(&masks, &mut rng)[0]] += 1;
        }
        // 3σ band around the expected 2000 per cell.
        let sigma = (draws as f64 * 0.2 * 0.8).sqrt();
        for (cell, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - 2000.0).abs() <= 3.0 * sigma,
                "cell {cell} drawn {c} times"
            );
        }
    }
}
