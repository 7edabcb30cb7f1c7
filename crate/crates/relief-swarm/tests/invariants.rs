//! Property tests over the simulation and observation invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relief_swarm::baseline::random_step;
use relief_swarm::grid::{
    action_mask, completion_rate, initial_completion_sweep, reachable_set, replay_routes, step,
    AgentKind, AgentState, CellIndex, EpisodeTrace, GridWorld, Scenario, Swap,
};
use relief_swarm::obs::{build_bundle, build_global, urgency, CH_CAR, CH_TASK, CH_URGE, CH_WORK};
use relief_swarm::scenario::{
    generate, ScenarioRecipe, StartPlacement, TaskPlacement, ValueSpec,
};

fn recipe_strategy() -> impl Strategy<Value = (ScenarioRecipe, u64)> {
    (
        prop_oneof![Just(4usize), Just(6), Just(8)],
        prop_oneof![Just(4usize), Just(6), Just(8)],
        0usize..6,
        1usize..10,
        1usize..3,
        1usize..4,
        0usize..3,
        prop_oneof![
            Just(StartPlacement::Same),
            Just(StartPlacement::Random),
            Just(StartPlacement::Checkin)
        ],
        prop_oneof![Just(TaskPlacement::Random), Just(TaskPlacement::Checkin)],
        0.15f64..0.9,
        0.5f64..3.5,
        any::<u64>(),
    )
        .prop_map(
            |(w, h, obst, tasks, uavs, workers, cars, start, taskp, csp, radius, seed)| {
                (
                    ScenarioRecipe {
                        width: w,
                        height: h,
                        obstacles: obst.min(w * h / 4),
                        tasks: tasks.min(w * h / 2),
                        task_placement: taskp,
                        uavs,
                        workers,
                        cars,
                        start_placement: start,
                        uav_radius: ValueSpec::Fixed(radius),
                        worker_radius: ValueSpec::Fixed((radius * 0.8).max(0.5)),
                        car_radius: ValueSpec::Fixed(radius),
                        csp: ValueSpec::Fixed(csp),
                        time_limit: 5,
                        seed: None,
                    },
                    seed,
                )
            },
        )
}

/// Drives one episode of random masked actions, checking the step-level
/// invariants at every move.
fn exercise_episode(scenario: &Scenario, seed: u64, moves: usize) {
    let (mut world, mut agents) = scenario.build().unwrap();
    let initial = world.initial_task_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining = {
        initial_completion_sweep(&mut world, &agents);
        world.remaining_tasks()
    };
    for _ in 0..moves {
        let bundle = build_bundle(&world, &agents).unwrap();
        // Masks are nonempty, obstacle-free, and subsets of reachability.
        for (agent, mask) in agents.iter().zip(&bundle.masks) {
            assert!(!mask.is_empty());
            for &cell in mask {
                assert!(!world.is_obstacle(cell));
            }
            if agent.is_stopped() {
                assert_eq!(mask, &vec![agent.loc]);
            } else {
                assert_eq!(
                    mask,
                    &reachable_set(&world, agent.loc, agent.radius).unwrap()
                );
            }
        }
        let prev: Vec<Option<f64>> = agents.iter().map(|a| a.battery.map(|b| b.pow)).collect();
        let prev_locs: Vec<CellIndex> = agents.iter().map(|a| a.loc).collect();
        let joint = random_step(&bundle.masks, &mut rng);
        let outcome = step(&mut world, &mut agents, &joint).unwrap();

        // Task monotonicity with exact per-step accounting.
        let now = world.remaining_tasks();
        assert_eq!(remaining - now, outcome.task_cpt);
        assert_eq!(outcome.task_cpt, outcome.completed_cells.len());
        remaining = now;

        let car_cells: Vec<CellIndex> = agents
            .iter()
            .filter(|a| a.kind == AgentKind::Car)
            .map(|a| a.loc)
            .collect();
        for (i, agent) in agents.iter().enumerate() {
            assert!(!world.is_obstacle(agent.loc), "agent on obstacle");
            let Some(batt) = agent.battery else { continue };
            assert!((0.0..=1.0).contains(&batt.pow), "power {}", batt.pow);
            let prev_pow = prev[i].unwrap();
            // Stopped UAVs never move.
            if prev_pow < batt.csp {
                assert_eq!(agent.loc, prev_locs[i], "stopped UAV relocated");
            }
            // Battery transition exactness.
            if car_cells.contains(&agent.loc) {
                assert_eq!(batt.pow, 1.0);
                assert!(outcome.swaps.iter().any(|s: &Swap| s.uav_id == agent.id));
            } else if prev_pow >= batt.csp {
                assert!((batt.pow - (prev_pow - batt.csp)).abs() < 1e-12);
            } else {
                assert_eq!(batt.pow, prev_pow);
            }
        }
        for swap in &outcome.swaps {
            let uav = &agents[swap.uav_id];
            assert!(car_cells.contains(&uav.loc), "swap without co-location");
        }
    }
    assert!(initial >= world.remaining_tasks());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_episodes_respect_all_invariants((recipe, seed) in recipe_strategy()) {
        let scenario = generate(&recipe, seed, None).unwrap();
        exercise_episode(&scenario, seed ^ 0x77, recipe.time_limit);
    }

    #[test]
    fn channel_conservation((recipe, seed) in recipe_strategy()) {
        let scenario = generate(&recipe, seed, None).unwrap();
        let (mut world, mut agents) = scenario.build().unwrap();
        initial_completion_sweep(&mut world, &agents);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..3 {
            let ch = build_global(&world, &agents);
            let workers = agents.iter().filter(|a| a.kind == AgentKind::Worker).count();
            let cars = agents.iter().filter(|a| a.kind == AgentKind::Car).count();
            prop_assert_eq!(ch.channel_sum(CH_WORK) as usize, workers);
            prop_assert_eq!(ch.channel_sum(CH_CAR) as usize, cars);
            prop_assert_eq!(ch.channel_sum(CH_TASK) as usize, world.remaining_tasks());
            let urge_total: f64 = agents
                .iter()
                .map(relief_swarm::obs::urgency_of)
                .sum();
            prop_assert!((ch.channel_sum(CH_URGE) - urge_total).abs() < 1e-12);

            let bundle = build_bundle(&world, &agents).unwrap();
            let joint = random_step(&bundle.masks, &mut rng);
            step(&mut world, &mut agents, &joint).unwrap();
        }
    }

    #[test]
    fn steps_are_deterministic((recipe, seed) in recipe_strategy()) {
        let scenario = generate(&recipe, seed, None).unwrap();
        let run = || {
            let (mut world, mut agents) = scenario.build().unwrap();
            initial_completion_sweep(&mut world, &agents);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let mut outcomes = Vec::new();
            for _ in 0..recipe.time_limit {
                let bundle = build_bundle(&world, &agents).unwrap();
                let joint = random_step(&bundle.masks, &mut rng);
                outcomes.push(step(&mut world, &mut agents, &joint).unwrap());
            }
            (outcomes, world, agents)
        };
        let (oa, wa, aa) = run();
        let (ob, wb, ab) = run();
        prop_assert_eq!(oa, ob);
        prop_assert_eq!(wa, wb);
        prop_assert_eq!(aa, ab);
    }

    #[test]
    fn replay_matches_live_episode((recipe, seed) in recipe_strategy()) {
        let scenario = generate(&recipe, seed, None).unwrap();
        let (world0, agents0) = scenario.build().unwrap();
        let (mut world, mut agents) = scenario.build().unwrap();
        let sweep = initial_completion_sweep(&mut world, &agents);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBEEF);
        let mut routes: Vec<Vec<CellIndex>> = agents.iter().map(|a| vec![a.loc]).collect();
        let mut per_step_cpt = vec![sweep.task_cpt];
        let mut per_step_swaps = vec![Vec::new()];
        for _ in 0..recipe.time_limit {
            let bundle = build_bundle(&world, &agents).unwrap();
            let joint = random_step(&bundle.masks, &mut rng);
            let outcome = step(&mut world, &mut agents, &joint).unwrap();
            for (route, &cell) in routes.iter_mut().zip(&joint) {
                route.push(cell);
            }
            per_step_cpt.push(outcome.task_cpt);
            per_step_swaps.push(outcome.swaps);
        }
        let live = EpisodeTrace {
            routes: routes.clone(),
            per_step_cpt,
            per_step_swaps,
            horizon: recipe.time_limit,
        };
        let (replayed, _) = replay_routes(&world0, &agents0, &routes, recipe.time_limit).unwrap();
        prop_assert_eq!(&replayed, &live);
        if world0.initial_task_count() > 0 {
            let rate = completion_rate(&live, &world0).unwrap();
            prop_assert!((0.0..=1.0).contains(&rate));
            let total: usize = live.per_step_cpt.iter().sum();
            prop_assert_eq!(total as f64 / world0.initial_task_count() as f64, rate);
        }
    }

    #[test]
    fn urgency_monotone_and_bounded(csp in 0.05f64..1.0, steps in 0usize..20) {
        let mut last = 1.0f64;
        let mut pow = 1.0f64;
        for _ in 0..steps {
            if pow >= csp {
                pow -= csp;
            }
        }
        // Walk power upward; urgency must not increase.
        let mut p = pow;
        while p <= 1.0 {
            let u = urgency(p, csp, AgentKind::Uav).unwrap();
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert!(u <= last + 1e-15);
            last = u;
            p += 0.01;
        }
    }

    #[test]
    fn id_onehots_form_identity((recipe, seed) in recipe_strategy()) {
        let scenario = generate(&recipe, seed, None).unwrap();
        let (world, agents) = scenario.build().unwrap();
        let bundle = build_bundle(&world, &agents).unwrap();
        let n = agents.len();
        let mut seen = vec![false; n];
        for local in &bundle.locals {
            let onehot = local.id_onehot(n);
            prop_assert_eq!(onehot.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert!(!seen[local.agent_index]);
            seen[local.agent_index] = true;
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }
}

/// A worked mask/step agreement check on a handcrafted board, outside
/// proptest so failures print plainly.
#[test]
fn masks_and_steps_agree_on_handcrafted_board() {
    let world = GridWorld::new(5, 4, &[7, 12], &[6, 11]).unwrap();
    let agents = vec![
        AgentState::uav(0, 0, 2.5, 1.0, 0.5),
        AgentState::worker(1, 19, 2.0),
        AgentState::car(2, 10, 3.0),
    ];
    for agent in &agents {
        let mask = action_mask(&world, agent).unwrap();
        assert!(mask.contains(&agent.loc));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let pick = mask[rng.gen_range(0..mask.len())];
            let mut w = world.clone();
            let mut a = agents.clone();
            let mut joint: Vec<CellIndex> = agents.iter().map(|x| x.loc).collect();
            joint[agent.id] = pick;
            step(&mut w, &mut a, &joint).unwrap();
            assert_eq!(a[agent.id].loc, pick);
        }
    }
}
