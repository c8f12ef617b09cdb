//! Fixtures shared by the integration suites: the four-agent reference
//! scenario and seeded random generators sized for mission runs and for
//! scheduler stress.

#![allow(dead_code)]

use mission_core::formats::{RawAgent, RawScenario, RawTask};
use mission_core::scenario::{validate_scenario, Scenario};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn task(center: Vec<f64>, radius: f64, boundaries: Vec<f64>, rewards: Vec<f64>) -> RawTask {
    RawTask {
        center,
        radius,
        deadline: boundaries[0],
        boundaries,
        rewards,
    }
}

fn agents(positions: &[[f64; 2]]) -> Vec<RawAgent> {
    positions
        .iter()
        .map(|p| RawAgent {
            position: p.to_vec(),
            velocity: vec![0.0, 0.0],
        })
        .collect()
}

/// Four agents on a line, agent 1 active, three tasks whose ladders have
/// 3, 1 and 3 accepting levels. Initial positions are fixed points of the
/// default [0,2]^2 start box.
pub fn reference_raw() -> RawScenario {
    RawScenario {
        name: None,
        dimension: 2,
        agents: agents(&[[0.2, 0.3], [0.8, 1.1], [1.4, 0.6], [1.9, 1.7]]),
        edges: vec![[1, 2], [2, 3], [3, 4]],
        active: vec![1],
        r_min: 1.0,
        r_max: 1.5,
        alpha: 0.8,
        tasks: vec![
            task(vec![10.0, 8.0], 1.0, vec![15.0, 10.0, 5.0, 0.0], vec![-20.0, 5.0, 10.0, 8.0]),
            task(vec![3.0, 10.0], 1.0, vec![20.0, 0.0], vec![-20.0, 10.0]),
            task(vec![5.0, 5.0], 1.0, vec![24.0, 14.0, 9.0, 0.0], vec![-20.0, 5.0, 10.0, 5.0]),
        ],
        init_box: None,
    }
}

pub fn reference_scenario() -> Scenario {
    validate_scenario(&reference_raw()).expect("reference scenario is valid")
}

fn line_edges(n: usize) -> Vec<[usize; 2]> {
    (1..n).map(|i| [i, i + 1]).collect()
}

fn star_edges(n: usize, hub: usize) -> Vec<[usize; 2]> {
    (1..=n).filter(|&i| i != hub).map(|i| [hub, i]).collect()
}

/// Draws region centers on an annulus slice, keeping every pair strictly
/// farther apart than the radius sum plus `clearance`. Returns `None` when a
/// region cannot be placed; early placements can blanket the slice with
/// their exclusion discs, so callers retry the whole draw on a salted seed.
fn draw_centers(
    rng: &mut ChaCha8Rng,
    radii: &[f64],
    norms: std::ops::RangeInclusive<f64>,
    max_angle: f64,
    clearance: f64,
) -> Option<Vec<[f64; 2]>> {
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(radii.len());
    'next: for &r in radii {
        for _ in 0..10_000 {
            let norm = rng.gen_range(norms.clone());
            let angle = rng.gen_range(0.0..=max_angle);
            let c = [norm * angle.cos(), norm * angle.sin()];
            let clear = centers.iter().zip(radii).all(|(p, &pr)| {
                let d = ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt();
                d > r + pr + clearance
            });
            if clear {
                centers.push(c);
                continue 'next;
            }
        }
        return None;
    }
    Some(centers)
}

/// Runs a seeded generator that can starve, retrying on salted seeds until
/// it yields. Attempt 0 uses the seed unchanged, so seeds whose first draw
/// succeeds keep their historical output.
fn with_retries<T>(seed: u64, build: impl Fn(ChaCha8Rng) -> Option<T>) -> T {
    for attempt in 0..64u64 {
        let salted = seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        if let Some(out) = build(ChaCha8Rng::seed_from_u64(salted)) {
            return out;
        }
    }
    panic!("generator starved for seed {seed}");
}

/// Random mission scenario: 2..=6 agents on a line or star, agent 1 active,
/// 1..=3 tasks. Regions sit on the quarter annulus `norm in [4.6, 6.2]`:
/// the inner radius keeps them clear of the `[0,2]^2` start box, the outer
/// cap bounds hop lengths so funnels never demand speeds a unit-mass fleet
/// cannot reach within the window bands. Task l's nonzero boundaries live in
/// a band of width 16 per task, so windows of different tasks never close
/// near each other and every approach or convergence span is at least 6
/// time units.
pub fn random_mission_raw(seed: u64) -> RawScenario {
    with_retries(seed, |mut rng| {
        let n = rng.gen_range(2..=6usize);
        let m = rng.gen_range(1..=3usize);

        let positions: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen_range(0.0..=2.0), rng.gen_range(0.0..=2.0)])
            .collect();
        let edges = if rng.gen_bool(0.5) {
            line_edges(n)
        } else {
            star_edges(n, rng.gen_range(1..=n))
        };

        let radii: Vec<f64> = (0..m).map(|_| rng.gen_range(0.9..=1.2)).collect();
        let centers =
            draw_centers(&mut rng, &radii, 4.6..=6.2, std::f64::consts::FRAC_PI_2, 0.7)?;

        let tasks = (0..m)
            .map(|l| {
                let band_top = 16.0 * (l as f64 + 1.0);
                let deadline = band_top - rng.gen_range(0.0..=2.0);
                let boundaries = if rng.gen_bool(0.5) {
                    vec![deadline, 0.0]
                } else {
                    // Keeps the middle boundary at least 6 under the deadline.
                    vec![deadline, band_top - 10.0 + rng.gen_range(0.0..=2.0), 0.0]
                };
                let rewards = std::iter::once(rng.gen_range(-25.0..=-15.0))
                    .chain((1..boundaries.len()).map(|_| rng.gen_range(5.0..=15.0)))
                    .collect();
                task(centers[l].to_vec(), radii[l], boundaries, rewards)
            })
            .collect();

        Some(RawScenario {
            name: None,
            dimension: 2,
            agents: agents(&positions),
            edges,
            active: vec![1],
            r_min: 0.8,
            r_max: 1.6,
            alpha: 0.8,
            tasks,
            init_box: None,
        })
    })
}

pub fn random_mission_scenario(seed: u64) -> Scenario {
    let raw = random_mission_raw(seed);
    validate_scenario(&raw).expect("generated mission scenario is valid")
}

/// Random scheduler instance: up to 5 tasks with ladders of up to 4 levels
/// (rejection included) and distinct deadlines. Geometry is unconstrained in
/// time, so these are for schedule search only, not for simulation.
pub fn random_scheduler_raw(seed: u64) -> RawScenario {
    with_retries(seed, |mut rng| {
        let n = rng.gen_range(2..=4usize);
        let m = rng.gen_range(1..=5usize);

        let positions: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen_range(0.0..=2.0), rng.gen_range(0.0..=2.0)])
            .collect();

        let radii: Vec<f64> = (0..m).map(|_| rng.gen_range(0.8..=1.6)).collect();
        let centers = draw_centers(&mut rng, &radii, 5.0..=12.0, std::f64::consts::TAU, 0.5)?;

        let tasks = (0..m)
            .map(|l| {
                // The index offset keeps deadlines pairwise distinct.
                let deadline = rng.gen_range(10.0..=30.0) + l as f64 * 1e-3;
                let boundaries = match rng.gen_range(2..=4usize) {
                    2 => vec![deadline, 0.0],
                    3 => vec![deadline, deadline * rng.gen_range(0.3..=0.7), 0.0],
                    _ => vec![
                        deadline,
                        deadline * rng.gen_range(0.55..=0.8),
                        deadline * rng.gen_range(0.2..=0.45),
                        0.0,
                    ],
                };
                let rewards = std::iter::once(rng.gen_range(-30.0..=-5.0))
                    .chain((1..boundaries.len()).map(|_| rng.gen_range(1.0..=20.0)))
                    .collect();
                task(centers[l].to_vec(), radii[l], boundaries, rewards)
            })
            .collect();

        Some(RawScenario {
            name: None,
            dimension: 2,
            agents: agents(&positions),
            edges: line_edges(n),
            active: vec![1],
            r_min: 0.8,
            r_max: 1.6,
            alpha: 0.8,
            tasks,
            init_box: None,
        })
    })
}

pub fn random_scheduler_scenario(seed: u64) -> Scenario {
    let raw = random_scheduler_raw(seed);
    validate_scenario(&raw).expect("generated scheduler scenario is valid")
}
