//! Builders shared by the unit-test modules. Compiled only for tests.

use crate::formats::{RawAgent, RawScenario, RawTask};
use crate::scenario::{validate_scenario, Scenario};

pub fn task(center: [f64; 2], radius: f64, boundaries: Vec<f64>, rewards: Vec<f64>) -> RawTask {
    RawTask {
        center: center.to_vec(),
        radius,
        deadline: boundaries[0],
        boundaries,
        rewards,
    }
}

pub fn raw_with(
    positions: &[[f64; 2]],
    edges: &[[usize; 2]],
    active: &[usize],
    tasks: Vec<RawTask>,
) -> RawScenario {
    RawScenario {
        name: None,
        dimension: 2,
        agents: positions
            .iter()
            .map(|p| RawAgent {
                position: p.to_vec(),
                velocity: vec![0.0, 0.0],
            })
            .collect(),
        edges: edges.to_vec(),
        active: active.to_vec(),
        r_min: 1.0,
        r_max: 1.5,
        alpha: 0.8,
        tasks,
        init_box: None,
    }
}

/// Four agents on a line graph, agent 1 active, three tasks with 4/2/4-level
/// ladders. Initial positions are fixed representatives of the unit-box draw.
pub fn reference_raw() -> RawScenario {
    raw_with(
        &[[0.2, 0.3], [0.8, 1.1], [1.4, 0.6], [1.9, 1.7]],
        &[[1, 2], [2, 3], [3, 4]],
        &[1],
        vec![
            task(
                [10.0, 8.0],
                1.0,
                vec![15.0, 10.0, 5.0, 0.0],
                vec![-20.0, 5.0, 10.0, 8.0],
            ),
            task([3.0, 10.0], 1.0, vec![20.0, 0.0], vec![-20.0, 10.0]),
            task(
                [5.0, 5.0],
                1.0,
                vec![24.0, 14.0, 9.0, 0.0],
                vec![-20.0, 5.0, 10.0, 5.0],
            ),
        ],
    )
}

pub fn reference_scenario() -> Scenario {
    validate_scenario(&reference_raw()).unwrap()
}
