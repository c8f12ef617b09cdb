//! Exact task scheduler: choose a visiting order over all tasks and a QoS
//! level per task to maximize `alpha * reward - (1 - alpha) * travel`, subject
//! to strictly increasing estimated completion times along the order.
//!
//! Two solvers share every scoring function: a depth-first branch-and-bound
//! (`solve_exact`) and an exhaustive enumerator (`brute_force_oracle`). Both
//! walk candidates in the same lexicographic order (task ids ascending, then
//! QoS levels ascending) and keep the first strict maximum, so ties resolve
//! to the lexicographically smallest (order, qos) pair in both and the two
//! results are bit-identical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::Scenario;

/// Largest task count the exhaustive oracle will accept (M! blows up fast).
pub const ORACLE_MAX_TASKS: usize = 8;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SchedulerError {
    #[error("task set is empty")]
    EmptyTaskSet,
    #[error("instance too large for exhaustive enumeration: {tasks} tasks > {ORACLE_MAX_TASKS}")]
    InstanceTooLarge { tasks: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Objective weight override; `None` uses the scenario's alpha.
    pub alpha: Option<f64>,
    /// Include the leg from the initial agent positions to the first served
    /// task. On by default so travel cost covers the whole tour.
    pub include_initial_leg: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            alpha: None,
            include_initial_leg: true,
        }
    }
}

impl SchedulerConfig {
    pub fn effective_alpha(&self, scenario: &Scenario) -> f64 {
        self.alpha.unwrap_or(scenario.alpha)
    }
}

/// Solver output: the full task permutation with one QoS level per task and
/// the canonical score decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Task ids in visiting order; rejected tasks stay in the permutation.
    pub order: Vec<usize>,
    /// QoS level per task in `order` (0 = rejected).
    pub qos: Vec<usize>,
    /// Estimated completion time per task in `order`; strictly increasing.
    pub estimated_completion: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub objective: f64,
}

impl Schedule {
    fn empty() -> Self {
        Schedule {
            order: Vec::new(),
            qos: Vec::new(),
            estimated_completion: Vec::new(),
            reward: 0.0,
            cost: 0.0,
            objective: 0.0,
        }
    }

    /// Assigned level for a task id, if the task is in the schedule.
    pub fn level_of(&self, task: usize) -> Option<usize> {
        self.order.iter().position(|&t| t == task).map(|i| self.qos[i])
    }
}

/// Spacing added to a deadline to slot a rejected task's estimated completion.
///
/// The minimum absolute difference over pairs of boundary values drawn from
/// two distinct tasks, each value taken from the task's non-terminal
/// boundaries (all but the trailing zero), skipping exact ties. When no such
/// pair exists (single task, or all compared values equal), falls back to the
/// smallest positive within-task boundary gap, then to 1.
pub fn compute_epsilon(scenario: &Scenario) -> Result<f64, SchedulerError> {
    let tasks = &scenario.tasks;
    if tasks.is_empty() {
        return Err(SchedulerError::EmptyTaskSet);
    }
    let mut eps = f64::INFINITY;
    for a in 0..tasks.len() {
        for b in (a + 1)..tasks.len() {
            let la = tasks[a].boundaries.len() - 1;
            let lb = tasks[b].boundaries.len() - 1;
            for &va in &tasks[a].boundaries[..la] {
                for &vb in &tasks[b].boundaries[..lb] {
                    let d = (va - vb).abs();
                    if d > 0.0 {
                        eps = eps.min(d);
                    }
                }
            }
        }
    }
    if eps.is_finite() {
        return Ok(eps);
    }
    // Fallback: smallest positive gap inside any single ladder.
    for t in tasks {
        for i in 0..t.boundaries.len() {
            for j in (i + 1)..t.boundaries.len() {
                let d = (t.boundaries[i] - t.boundaries[j]).abs();
                if d > 0.0 {
                    eps = eps.min(d);
                }
            }
        }
    }
    Ok(if eps.is_finite() { eps } else { 1.0 })
}

/// Estimated completion time of `task` at QoS `level`.
///
/// An accepting level `q >= 1` is pinned to the closing edge of its interval,
/// `boundaries[q-1]` (latest admissible completion). Rejection (level 0) is
/// slotted just past the deadline at `deadline + eps`.
pub fn estimated_completion(scenario: &Scenario, task_id: usize, level: usize, eps: f64) -> f64 {
    let task = scenario
        .task(task_id)
        .unwrap_or_else(|| panic!("unknown task id {task_id}"));
    assert!(level < task.level_count(), "QoS level {level} out of range for task {task_id}");
    if level == 0 {
        task.deadline + eps
    } else {
        task.boundaries[level - 1]
    }
}

/// Travel cost of moving the whole fleet between consecutive stops.
///
/// Region to region: `N * ||c_from - c_to||`. From the initial configuration
/// (`from = None`) to the first region: the exact per-agent distance sum.
pub fn transition_cost(scenario: &Scenario, from: Option<usize>, to: usize) -> f64 {
    let c_to = &scenario
        .task(to)
        .unwrap_or_else(|| panic!("unknown task id {to}"))
        .region
        .center;
    match from {
        Some(f) => {
            let c_from = &scenario
                .task(f)
                .unwrap_or_else(|| panic!("unknown task id {f}"))
                .region
                .center;
            scenario.agent_count() as f64 * (c_from - c_to).norm()
        }
        None => scenario.init_pos.iter().map(|p| (p - c_to).norm()).sum(),
    }
}

/// Total travel cost along an order. Rejected tasks (level 0) are skipped
/// entirely: the fleet never moves toward a task it will not serve.
pub fn path_cost(
    scenario: &Scenario,
    order: &[usize],
    qos: &[usize],
    config: &SchedulerConfig,
) -> f64 {
    let mut cost = 0.0;
    let mut prev: Option<usize> = None;
    let mut first_served = true;
    for (&task, &level) in order.iter().zip(qos) {
        if level == 0 {
            continue;
        }
        if first_served {
            if config.include_initial_leg {
                cost += transition_cost(scenario, None, task);
            }
            first_served = false;
        } else {
            cost += transition_cost(scenario, prev, task);
        }
        prev = Some(task);
    }
    cost
}

/// Total reward along an order: each task pays its assigned level's reward;
/// rejected tasks pay their (negative) penalty.
pub fn path_reward(scenario: &Scenario, order: &[usize], qos: &[usize]) -> f64 {
    order
        .iter()
        .zip(qos)
        .map(|(&task, &level)| {
            let t = scenario
                .task(task)
                .unwrap_or_else(|| panic!("unknown task id {task}"));
            assert!(level < t.level_count(), "QoS level {level} out of range for task {task}");
            t.rewards[level]
        })
        .sum()
}

/// The scalarized objective `alpha * reward - (1 - alpha) * travel`.
pub fn objective_value(scenario: &Scenario, config: &SchedulerConfig, reward: f64, cost: f64) -> f64 {
    let alpha = config.effective_alpha(scenario);
    alpha * reward - (1.0 - alpha) * cost
}

/// Feasibility: estimated completion times strictly increase along the order.
/// Every task participates, rejected ones through their `deadline + eps` slot.
pub fn check_feasible(scenario: &Scenario, order: &[usize], qos: &[usize], eps: f64) -> bool {
    let mut last = f64::NEG_INFINITY;
    for (&task, &level) in order.iter().zip(qos) {
        let ec = estimated_completion(scenario, task, level, eps);
        if !(ec > last) {
            return false;
        }
        last = ec;
    }
    true
}

/// Number of (permutation, QoS assignment) candidates, feasible or not.
pub fn candidate_count(scenario: &Scenario) -> u128 {
    let m = scenario.tasks.len() as u128;
    let perms = (1..=m).product::<u128>();
    let levels: u128 = scenario
        .tasks
        .iter()
        .map(|t| t.level_count() as u128)
        .product();
    perms * levels
}

fn score(scenario: &Scenario, order: &[usize], qos: &[usize], eps: f64, config: &SchedulerConfig) -> Schedule {
    let reward = path_reward(scenario, order, qos);
    let cost = path_cost(scenario, order, qos, config);
    Schedule {
        order: order.to_vec(),
        qos: qos.to_vec(),
        estimated_completion: order
            .iter()
            .zip(qos)
            .map(|(&t, &q)| estimated_completion(scenario, t, q, eps))
            .collect(),
        reward,
        cost,
        objective: objective_value(scenario, config, reward, cost),
    }
}

/// Exhaustive enumeration in lexicographic candidate order, keeping the first
/// strict maximum. Reference oracle for `solve_exact`; refuses instances past
/// [`ORACLE_MAX_TASKS`].
pub fn brute_force_oracle(
    scenario: &Scenario,
    config: &SchedulerConfig,
) -> Result<Schedule, SchedulerError> {
    use itertools::Itertools;
    let m = scenario.tasks.len();
    if m == 0 {
        return Ok(Schedule::empty());
    }
    if m > ORACLE_MAX_TASKS {
        return Err(SchedulerError::InstanceTooLarge { tasks: m });
    }
    let eps = compute_epsilon(scenario)?;
    let ids: Vec<usize> = scenario.tasks.iter().map(|t| t.id).collect();
    let mut best: Option<Schedule> = None;
    for order in ids.iter().copied().permutations(m) {
        let radices: Vec<usize> = order
            .iter()
            .map(|&t| scenario.task(t).unwrap().level_count())
            .collect();
        // Mixed-radix counter, last position fastest: ascending lex order.
        let mut qos = vec![0usize; m];
        'assignments: loop {
            if check_feasible(scenario, &order, &qos, eps) {
                let cand = score(scenario, &order, &qos, eps, config);
                if best.as_ref().map_or(true, |b| cand.objective > b.objective) {
                    best = Some(cand);
                }
            }
            let mut pos = m;
            while pos > 0 {
                pos -= 1;
                qos[pos] += 1;
                if qos[pos] < radices[pos] {
                    continue 'assignments;
                }
                qos[pos] = 0;
            }
            break;
        }
    }
    Ok(best.unwrap_or_else(|| {
        panic!("no feasible candidate: estimated completion slots collide across all orders")
    }))
}

/// Relative slack applied when pruning so float noise in the optimistic bound
/// can never discard a candidate the oracle would keep.
fn prune_slack(incumbent: f64) -> f64 {
    1e-9 * (1.0 + incumbent.abs())
}

/// Depth-first branch-and-bound over (order, QoS) candidates.
///
/// Children expand task ids ascending and QoS levels ascending, matching the
/// oracle's enumeration order, and leaves are re-scored through the same
/// path functions, so the first strict maximum found is bit-identical to the
/// oracle's. The optimistic bound credits every unscheduled task its best
/// reward and charges no further travel; pruning keeps a small slack under
/// the incumbent so floating-point noise cannot make it unsound.
pub fn solve_exact(scenario: &Scenario, config: &SchedulerConfig) -> Schedule {
    let m = scenario.tasks.len();
    if m == 0 {
        return Schedule::empty();
    }
    let eps = compute_epsilon(scenario).expect("nonempty task set");
    let ids: Vec<usize> = scenario.tasks.iter().map(|t| t.id).collect();
    let best_rewards: Vec<f64> = scenario
        .tasks
        .iter()
        .map(|t| t.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();

    struct Dfs<'a> {
        scenario: &'a Scenario,
        config: &'a SchedulerConfig,
        eps: f64,
        ids: &'a [usize],
        best_rewards: &'a [f64],
        order: Vec<usize>,
        qos: Vec<usize>,
        used: Vec<bool>,
        prefix_reward: f64,
        prefix_cost: f64,
        last_ec: f64,
        last_served: Option<usize>,
        incumbent: Option<Schedule>,
    }

    impl Dfs<'_> {
        fn optimistic_bound(&self) -> f64 {
            let remaining: f64 = self
                .used
                .iter()
                .zip(self.best_rewards)
                .filter(|(u, _)| !**u)
                .map(|(_, r)| *r)
                .sum();
            objective_value(
                self.scenario,
                self.config,
                self.prefix_reward + remaining,
                self.prefix_cost,
            )
        }

        fn recurse(&mut self, m: usize) {
            if self.order.len() == m {
                let cand = score(self.scenario, &self.order, &self.qos, self.eps, self.config);
                if self
                    .incumbent
                    .as_ref()
                    .map_or(true, |b| cand.objective > b.objective)
                {
                    self.incumbent = Some(cand);
                }
                return;
            }
            if let Some(best) = &self.incumbent {
                if self.optimistic_bound() < best.objective - prune_slack(best.objective) {
                    return;
                }
            }
            for slot in 0..m {
                if self.used[slot] {
                    continue;
                }
                let task = self.ids[slot];
                let spec = self.scenario.task(task).unwrap();
                for level in 0..spec.level_count() {
                    let ec = estimated_completion(self.scenario, task, level, self.eps);
                    if !(ec > self.last_ec) {
                        continue;
                    }
                    let step_reward = spec.rewards[level];
                    let step_cost = if level == 0 {
                        0.0
                    } else if self.last_served.is_none() {
                        if self.config.include_initial_leg {
                            transition_cost(self.scenario, None, task)
                        } else {
                            0.0
                        }
                    } else {
                        transition_cost(self.scenario, self.last_served, task)
                    };

                    let saved = (self.last_ec, self.last_served);
                    self.used[slot] = true;
                    self.order.push(task);
                    self.qos.push(level);
                    self.prefix_reward += step_reward;
                    self.prefix_cost += step_cost;
                    self.last_ec = ec;
                    if level > 0 {
                        self.last_served = Some(task);
                    }

                    self.recurse(m);

                    self.used[slot] = false;
                    self.order.pop();
                    self.qos.pop();
                    self.prefix_reward -= step_reward;
                    self.prefix_cost -= step_cost;
                    self.last_ec = saved.0;
                    self.last_served = saved.1;
                }
            }
        }
    }

    let mut dfs = Dfs {
        scenario,
        config,
        eps,
        ids: &ids,
        best_rewards: &best_rewards,
        order: Vec::with_capacity(m),
        qos: Vec::with_capacity(m),
        used: vec![false; m],
        prefix_reward: 0.0,
        prefix_cost: 0.0,
        last_ec: f64::NEG_INFINITY,
        last_served: None,
        incumbent: None,
    };
    dfs.recurse(m);
    dfs.incumbent.unwrap_or_else(|| {
        panic!("no feasible candidate: estimated completion slots collide across all orders")
    })
}
