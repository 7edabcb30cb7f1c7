//! Scratch harness for sizing the learning-sanity instances.

use std::time::Instant;

use relief_swarm::grid::{MoverSpec, Scenario, UavSpec};
use relief_swarm::oracle::solve_exact;
use relief_swarm::scenario::{ScenarioRecipe, StartPlacement, TaskPlacement, ValueSpec};
use relief_swarm::train::{fit, Algorithm, ScenarioSource, TrainConfig};

fn tiny_instance(csp: f64, time_limit: usize) -> Scenario {
    Scenario {
        width: 4,
        height: 4,
        obstacles: vec![],
        tasks: vec![5, 6, 9, 10],
        uavs: vec![UavSpec {
            loc: 0,
            radius: 2.0,
            csp,
        }],
        workers: vec![MoverSpec { loc: 0, radius: 2.0 }],
        cars: vec![MoverSpec { loc: 15, radius: 2.0 }],
        time_limit,
    }
}

fn surrogate_recipe() -> ScenarioRecipe {
    let arg = |n: usize, default: f64| -> f64 {
        std::env::args()
            .nth(n)
            .and_then(|s| s.parse().ok())
            .unwrap_or(default)
    };
    ScenarioRecipe {
        width: 8,
        height: 8,
        obstacles: 8,
        tasks: 12,
        task_placement: TaskPlacement::Random,
        uavs: 2,
        workers: 4,
        cars: 1,
        start_placement: if arg(7, 0.0) > 0.0 {
            StartPlacement::Random
        } else {
            StartPlacement::Same
        },
        uav_radius: ValueSpec::Fixed(arg(4, 5.0)),
        worker_radius: ValueSpec::Fixed(arg(5, 3.0)),
        car_radius: ValueSpec::Fixed(arg(6, 4.0)),
        csp: ValueSpec::Fixed(0.3),
        time_limit: 6,
        seed: None,
    }
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "tiny".into());
    match mode.as_str() {
        "tiny" => tune_tiny(),
        "surrogate" => tune_surrogate(),
        other => eprintln!("unknown mode {other}"),
    }
}

fn tune_tiny() {
    let csp: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.45);
    let max_steps: u64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000);
    let hidden_mult: usize = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let decay: u64 = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1024);
    let time_limit: usize = std::env::args()
        .nth(6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let scenario = tiny_instance(csp, time_limit);
    let oracle = solve_exact(&scenario, scenario.time_limit).unwrap();
    let optimal_rate = oracle.optimal as f64 / scenario.tasks.len() as f64;
    println!(
        "oracle optimum {} of {} tasks (rate {:.4}), {} nodes",
        oracle.optimal,
        scenario.tasks.len(),
        optimal_rate,
        oracle.nodes
    );

    let mut successes = 0;
    for seed in 0..10u64 {
        let started = Instant::now();
        let config = TrainConfig {
            algorithm: Algorithm::Rl,
            max_steps,
            seed,
            hidden_mult,
            epsilon: relief_swarm::train::EpsilonSchedule {
                start: 1.0,
                end: 0.1,
                decay_steps: decay,
            },
            eval_every: 100,
            eval_episodes: 1,
            stop_at_rate: Some(optimal_rate),
            ..TrainConfig::default()
        };
        let result = fit(&config, &ScenarioSource::Fixed(scenario.clone()), None).unwrap();
        let best = result
            .log
            .iter()
            .filter_map(|l| l.eval_rate)
            .fold(0.0f64, f64::max);
        let reached = best >= optimal_rate;
        successes += reached as u32;
        println!(
            "seed {seed}: steps {} best_rate {:.4} reached {} ({:.1}s)",
            result.checkpoint.step_counter,
            best,
            reached,
            started.elapsed().as_secs_f64()
        );
    }
    println!("successes: {successes}/10");
}

fn tune_surrogate() {
    let steps: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4000);
    let hidden_mult: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2);
    let recipe = surrogate_recipe();
    let source = ScenarioSource::Pool(recipe.clone(), (0..20).collect());

    for (name, algorithm, reward_mode) in [
        ("rl", Algorithm::Rl, None),
        ("dnn", Algorithm::Dnn, None),
        (
            "rl-temp",
            Algorithm::Rl,
            Some(relief_swarm::train::RewardMode::TaskPlusMitig),
        ),
    ] {
        let started = Instant::now();
        let config = TrainConfig {
            algorithm,
            reward_mode,
            max_steps: steps,
            seed: 7,
            hidden_mult,
            embed_dim: 16,
            epsilon: relief_swarm::train::EpsilonSchedule {
                start: 1.0,
                end: 0.1,
                decay_steps: 2048,
            },
            eval_every: 500,
            eval_episodes: 3,
            ..TrainConfig::default()
        };
        let result = fit(&config, &source, None).unwrap();
        let ckpt = result.checkpoint;
        // Evaluate ε=0 over 20 recipe seeds against greedy.
        let policies = vec![relief_swarm::eval::NamedPolicy {
            name: name.into(),
            kind: relief_swarm::eval::PolicyKind::Learned(Box::new(ckpt)),
        }];
        let seeds: Vec<u64> = (0..20).collect();
        let report = relief_swarm::eval::run_eval(
            &policies,
            &[("surrogate".into(), recipe.clone())],
            &seeds,
            None,
            None,
        )
        .unwrap();
        println!(
            "{name}: mean {:.4} (train {:.0}s)",
            report.entries[0].mean_rate,
            started.elapsed().as_secs_f64()
        );
        for e in &report.entries[0].episodes {
            print!("{:.2} ", e.rate);
        }
        println!();
    }

    let greedy = vec![
        relief_swarm::eval::NamedPolicy {
            name: "greedy".into(),
            kind: relief_swarm::eval::PolicyKind::Greedy,
        },
        relief_swarm::eval::NamedPolicy {
            name: "random".into(),
            kind: relief_swarm::eval::PolicyKind::Random,
        },
    ];
    let seeds: Vec<u64> = (0..20).collect();
    let report = relief_swarm::eval::run_eval(
        &greedy,
        &[("surrogate".into(), recipe)],
        &seeds,
        None,
        None,
    )
    .unwrap();
    for entry in &report.entries {
        println!("{}: mean {:.4}", entry.policy, entry.mean_rate);
        for e in &entry.episodes {
            print!("{:.2} ", e.rate);
        }
        println!();
    }
}
