//! Deterministic fixed-step simulation of the double-integrator fleet.
//!
//! Missions execute scheduled tasks back to back: each accepted task gets a
//! controller synthesized from the fleet state at its start time, the fleet
//! is integrated with classical RK4 at a fixed step, and completion (every
//! agent inside the target ball) is located by bisecting the final step. The
//! completion time of one task is the start time of the next. After the last
//! task a consensus controller runs for a fixed settling period.
//!
//! Everything here is bitwise deterministic: no threads, no hash maps with
//! random seeds, no time sources. Rerunning with the same inputs reproduces
//! the trace exactly, which is what the verification pass relies on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    classify_case, synth_case1, synth_case2, CaseTag, ControllerError, SynthConfig,
    TaskController, TaskWindow,
};
use crate::scenario::{sample_initial_positions, AgentState, Region, Scenario, TaskSpec, Vector};
use crate::scheduler::Schedule;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("time step must be positive and finite, got {dt}")]
    BadTimeStep { dt: f64 },
    #[error("controller synthesis failed: {0}")]
    Synthesis(#[from] ControllerError),
    #[error("schedule references unknown task {task}")]
    UnknownTask { task: usize },
    #[error("task {task} supports levels 0..{levels}, schedule assigns {qos}")]
    QosOutOfRange { task: usize, qos: usize, levels: usize },
    #[error("malformed schedule: {reason}")]
    MalformedSchedule { reason: String },
}

/// Integration and mission-loop parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    /// Locate the completion instant by bisecting the final step; when off,
    /// the completion time is the end of the full step that landed inside.
    pub bisection: bool,
    /// Bisection stops once the bracketing interval is this short.
    pub event_tol: f64,
    /// A task that has not completed by this multiple of its window close is
    /// abandoned. The controller design makes completion by the close
    /// certain, so tripping this indicates a broken setup, not bad luck.
    pub deadline_guard: f64,
    /// Duration of the consensus phase after the last task.
    pub idle_settle: f64,
    pub idle_kp: f64,
    pub idle_kv: f64,
    /// When set, initial positions are redrawn from the scenario's start box
    /// with this seed (velocities zeroed) before anything else runs.
    pub seed: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            bisection: true,
            event_tol: 1e-9,
            deadline_guard: 1.5,
            idle_settle: 10.0,
            idle_kp: 1.0,
            idle_kv: 2.0,
            seed: None,
        }
    }
}

/// Tracking funnel readings for one active agent at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub xi: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Edge readings at one instant. The funnel fields are empty during idle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSample {
    pub dist: f64,
    pub xi: Option<f64>,
    pub gamma: Option<f64>,
}

/// Full fleet snapshot at one recorded instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub pos: Vec<Vector>,
    pub vel: Vec<Vector>,
    pub input: Vec<Vector>,
    pub tracking: BTreeMap<usize, TrackSample>,
    pub edges: Vec<EdgeSample>,
}

/// Outcome of simulating a single task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskResult {
    Completed { at: f64 },
    BoundViolation { t: f64 },
    DeadlinePassed { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub task: usize,
    pub case: CaseTag,
    pub t0: f64,
    pub lower: f64,
    pub upper: f64,
    pub completion: Option<f64>,
    /// Service level actually attained, judged from the completion time.
    pub achieved: usize,
    /// Index range of this execution's rows in the sample log, inclusive.
    pub first_sample: usize,
    pub last_sample: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MissionStatus {
    Completed,
    BoundViolation { task: usize, t: f64 },
    DeadlinePassed { task: usize, t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionTrace {
    pub samples: Vec<Sample>,
    pub executions: Vec<ExecutionRecord>,
    /// Sample index range of the consensus phase, when one ran.
    pub idle_range: Option<(usize, usize)>,
    /// Attained service level per task id; rejected and failed tasks get 0.
    pub achieved: BTreeMap<usize, usize>,
    pub status: MissionStatus,
}

/// One classical RK4 step of the double integrator under acceleration field
/// `accel(state, t)`.
pub fn rk4_step<F>(state: &AgentState, t: f64, dt: f64, accel: F) -> Result<AgentState, SimError>
where
    F: Fn(&AgentState, f64) -> Vec<Vector>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::BadTimeStep { dt });
    }
    let n = state.agent_count();
    let half = dt / 2.0;

    let k1v = accel(state, t);
    let k1x = &state.vel;

    let mid1 = AgentState::new(
        (0..n).map(|i| &state.pos[i] + half * &k1x[i]).collect(),
        (0..n).map(|i| &state.vel[i] + half * &k1v[i]).collect(),
    );
    let k2v = accel(&mid1, t + half);
    let k2x = &mid1.vel;

    let mid2 = AgentState::new(
        (0..n).map(|i| &state.pos[i] + half * &k2x[i]).collect(),
        (0..n).map(|i| &state.vel[i] + half * &k2v[i]).collect(),
    );
    let k3v = accel(&mid2, t + half);
    let k3x = &mid2.vel;

    let end = AgentState::new(
        (0..n).map(|i| &state.pos[i] + dt * &k3x[i]).collect(),
        (0..n).map(|i| &state.vel[i] + dt * &k3v[i]).collect(),
    );
    let k4v = accel(&end, t + dt);
    let k4x = &end.vel;

    let sixth = dt / 6.0;
    let next = AgentState::new(
        (0..n)
            .map(|i| {
                &state.pos[i] + sixth * (&k1x[i] + 2.0 * &k2x[i] + 2.0 * &k3x[i] + &k4x[i])
            })
            .collect(),
        (0..n)
            .map(|i| {
                &state.vel[i] + sixth * (&k1v[i] + 2.0 * &k2v[i] + 2.0 * &k3v[i] + &k4v[i])
            })
            .collect(),
    );
    if !next.is_finite() {
        return Err(SimError::NonFiniteState { t: t + dt });
    }
    Ok(next)
}

/// A task is complete once every agent sits inside the target ball.
pub fn detect_completion(state: &AgentState, region: &Region) -> bool {
    state
        .pos
        .iter()
        .all(|p| (p - &region.center).norm() <= region.radius)
}

/// Service level attained by completing at time `ae`: level k when `ae` lies
/// in the k-th window, 0 when the deadline was missed entirely.
pub fn achieved_qos(ae: f64, task: &TaskSpec) -> usize {
    let b = &task.boundaries;
    if ae > task.deadline {
        return 0;
    }
    for k in 1..b.len() {
        if ae > b[k] {
            return k;
        }
    }
    b.len() - 1
}

fn record_sample(
    samples: &mut Vec<Sample>,
    ctrl: &TaskController,
    state: &AgentState,
    t: f64,
) -> Result<(), ControllerError> {
    let errs = ctrl.normalized_errors(state, t)?;
    let mut tracking = BTreeMap::new();
    for (&agent, &xi) in &errs.tracking {
        let (lower, upper) = ctrl.agent_bounds(agent, t)?;
        tracking.insert(agent, TrackSample { xi, lower, upper });
    }
    let edge_list = ctrl.edge_list();
    let mut edges = Vec::with_capacity(edge_list.len());
    for (index, (i, j)) in edge_list.into_iter().enumerate() {
        let dist = (&state.pos[i - 1] - &state.pos[j - 1]).norm();
        let (xi, gamma) = if ctrl.case_tag() == CaseTag::Idle {
            (None, None)
        } else {
            (
                Some(errs.edges[index]),
                Some(ctrl.edge_bound(index, t)?),
            )
        };
        edges.push(EdgeSample { dist, xi, gamma });
    }
    samples.push(Sample {
        t,
        pos: state.pos.clone(),
        vel: state.vel.clone(),
        input: ctrl.control_force_raw(state, t),
        tracking,
        edges,
    });
    Ok(())
}

/// Simulates one synthesized task controller until completion, violation, or
/// the deadline guard. Samples are appended to `samples`; the returned state
/// is the fleet at the final recorded instant.
pub fn run_task(
    state: &AgentState,
    ctrl: &TaskController,
    sim: &SimConfig,
    samples: &mut Vec<Sample>,
) -> Result<(TaskResult, AgentState), SimError> {
    if !(sim.dt > 0.0) || !sim.dt.is_finite() {
        return Err(SimError::BadTimeStep { dt: sim.dt });
    }
    let window = ctrl
        .window()
        .expect("task simulation requires a windowed controller")
        .clone();
    let t0 = window.t0;
    let region = window.target().clone();
    let cutoff = sim.deadline_guard * window.upper;
    let accel = |s: &AgentState, t: f64| ctrl.control_force_raw(s, t);

    match record_sample(samples, ctrl, state, t0) {
        Ok(()) => {}
        Err(ControllerError::BoundViolation { t, .. }) => {
            return Ok((TaskResult::BoundViolation { t }, state.clone()));
        }
        Err(e) => return Err(SimError::Synthesis(e)),
    }
    if detect_completion(state, &region) {
        return Ok((TaskResult::Completed { at: t0 }, state.clone()));
    }

    let mut cur = state.clone();
    let mut i: u64 = 0;
    loop {
        let t_i = t0 + (i as f64) * sim.dt;
        if t_i >= cutoff {
            return Ok((TaskResult::DeadlinePassed { t: t_i }, cur));
        }
        let next = rk4_step(&cur, t_i, sim.dt, accel)?;
        if detect_completion(&next, &region) {
            let (ae, hit) = if sim.bisection {
                // Shrink the step until the bracket is tight, keeping the
                // completing side so the reported state is inside the ball.
                let (mut lo, mut hi) = (0.0_f64, sim.dt);
                let mut hit = next;
                while hi - lo > sim.event_tol {
                    let mid = 0.5 * (lo + hi);
                    let trial = rk4_step(&cur, t_i, mid, accel)?;
                    if detect_completion(&trial, &region) {
                        hi = mid;
                        hit = trial;
                    } else {
                        lo = mid;
                    }
                }
                (t_i + hi, hit)
            } else {
                (t_i + sim.dt, next)
            };
            match record_sample(samples, ctrl, &hit, ae) {
                Ok(()) => {}
                Err(ControllerError::BoundViolation { t, .. }) => {
                    return Ok((TaskResult::BoundViolation { t }, hit));
                }
                Err(e) => return Err(SimError::Synthesis(e)),
            }
            return Ok((TaskResult::Completed { at: ae }, hit));
        }
        let t_next = t0 + ((i + 1) as f64) * sim.dt;
        match record_sample(samples, ctrl, &next, t_next) {
            Ok(()) => {}
            Err(ControllerError::BoundViolation { t, .. }) => {
                return Ok((TaskResult::BoundViolation { t }, next));
            }
            Err(e) => return Err(SimError::Synthesis(e)),
        }
        cur = next;
        i += 1;
    }
}

fn run_idle(
    state: &AgentState,
    t0: f64,
    scenario: &Scenario,
    sim: &SimConfig,
    samples: &mut Vec<Sample>,
) -> Result<AgentState, SimError> {
    let ctrl = TaskController::Idle {
        kp: sim.idle_kp,
        kv: sim.idle_kv,
        edges: scenario.graph.edges().to_vec(),
    };
    let accel = |s: &AgentState, t: f64| ctrl.control_force_raw(s, t);
    record_sample(samples, &ctrl, state, t0).map_err(SimError::Synthesis)?;
    let mut cur = state.clone();
    let full = (sim.idle_settle / sim.dt).floor() as u64;
    for i in 0..full {
        let t_i = t0 + (i as f64) * sim.dt;
        cur = rk4_step(&cur, t_i, sim.dt, accel)?;
        record_sample(samples, &ctrl, &cur, t0 + ((i + 1) as f64) * sim.dt)
            .map_err(SimError::Synthesis)?;
    }
    let covered = (full as f64) * sim.dt;
    let rem = sim.idle_settle - covered;
    if rem > 1e-12 {
        cur = rk4_step(&cur, t0 + covered, rem, accel)?;
        record_sample(samples, &ctrl, &cur, t0 + sim.idle_settle).map_err(SimError::Synthesis)?;
    }
    Ok(cur)
}

/// Builds the scenario actually simulated: either the scenario as given, or
/// a copy with freshly sampled initial positions when a seed is supplied.
/// Controller synthesis depends on the initial geometry, so the substitution
/// must happen before anything else looks at the scenario.
pub fn effective_scenario(scenario: &Scenario, sim: &SimConfig) -> Scenario {
    match sim.seed {
        None => scenario.clone(),
        Some(seed) => {
            let mut s = scenario.clone();
            s.init_pos = sample_initial_positions(
                seed,
                &s.init_box,
                s.agent_count(),
                &s.tasks,
            );
            let dim = s.dim;
            s.init_vel = (0..s.agent_count()).map(|_| Vector::zeros(dim)).collect();
            s
        }
    }
}

fn check_schedule(scenario: &Scenario, schedule: &Schedule) -> Result<(), SimError> {
    if schedule.order.len() != schedule.qos.len() {
        return Err(SimError::MalformedSchedule {
            reason: format!(
                "order lists {} tasks but qos lists {}",
                schedule.order.len(),
                schedule.qos.len()
            ),
        });
    }
    if schedule.order.len() != scenario.tasks.len() {
        return Err(SimError::MalformedSchedule {
            reason: format!(
                "schedule covers {} tasks, scenario has {}",
                schedule.order.len(),
                scenario.tasks.len()
            ),
        });
    }
    let mut seen = vec![false; scenario.tasks.len() + 1];
    for (&id, &q) in schedule.order.iter().zip(&schedule.qos) {
        let task = scenario.task(id).ok_or(SimError::UnknownTask { task: id })?;
        if seen[id] {
            return Err(SimError::MalformedSchedule {
                reason: format!("task {id} appears twice"),
            });
        }
        seen[id] = true;
        if q >= task.level_count() {
            return Err(SimError::QosOutOfRange {
                task: id,
                qos: q,
                levels: task.level_count(),
            });
        }
    }
    Ok(())
}

/// Executes a schedule end to end and returns the full trace. Accepted tasks
/// run in schedule order, each starting where the previous one completed;
/// rejected tasks are skipped. A consensus settling phase follows the last
/// task unless the mission failed first.
pub fn run_mission(
    scenario: &Scenario,
    schedule: &Schedule,
    sim: &SimConfig,
    synth: &SynthConfig,
) -> Result<MissionTrace, SimError> {
    let scenario = effective_scenario(scenario, sim);
    check_schedule(&scenario, schedule)?;

    let mut samples = Vec::new();
    let mut executions = Vec::new();
    let mut achieved: BTreeMap<usize, usize> =
        scenario.tasks.iter().map(|task| (task.id, 0)).collect();
    let mut state = scenario.initial_state();
    let mut t = 0.0_f64;
    let mut status = MissionStatus::Completed;

    for (&task_id, &level) in schedule.order.iter().zip(&schedule.qos) {
        if level == 0 {
            continue;
        }
        let task = scenario.task(task_id).expect("schedule checked above");
        let (lower, upper) = task
            .interval(level)
            .expect("qos level checked above");
        if upper <= t {
            // The window is already shut; there is nothing to synthesize.
            status = MissionStatus::DeadlinePassed { task: task_id, t };
            break;
        }
        let window = TaskWindow::new(task_id, t, lower, upper, task.region.clone());
        let case = classify_case(t, lower);
        let ctrl = match case {
            CaseTag::CaseI => synth_case1(&state, &window, &scenario, synth)?,
            _ => synth_case2(&state, &window, &scenario, synth)?,
        };
        let first_sample = samples.len();
        let (result, end_state) = run_task(&state, &ctrl, sim, &mut samples)?;
        let last_sample = samples.len().saturating_sub(1).max(first_sample);
        state = end_state;
        match result {
            TaskResult::Completed { at } => {
                let got = achieved_qos(at, task);
                achieved.insert(task_id, got);
                executions.push(ExecutionRecord {
                    task: task_id,
                    case,
                    t0: window.t0,
                    lower,
                    upper,
                    completion: Some(at),
                    achieved: got,
                    first_sample,
                    last_sample,
                });
                t = at;
            }
            TaskResult::BoundViolation { t: tv } => {
                executions.push(ExecutionRecord {
                    task: task_id,
                    case,
                    t0: window.t0,
                    lower,
                    upper,
                    completion: None,
                    achieved: 0,
                    first_sample,
                    last_sample,
                });
                status = MissionStatus::BoundViolation { task: task_id, t: tv };
                break;
            }
            TaskResult::DeadlinePassed { t: td } => {
                executions.push(ExecutionRecord {
                    task: task_id,
                    case,
                    t0: window.t0,
                    lower,
                    upper,
                    completion: None,
                    achieved: 0,
                    first_sample,
                    last_sample,
                });
                status = MissionStatus::DeadlinePassed { task: task_id, t: td };
                break;
            }
        }
    }

    let mut idle_range = None;
    if status == MissionStatus::Completed && sim.idle_settle > 0.0 {
        let first = samples.len();
        run_idle(&state, t, &scenario, sim, &mut samples)?;
        idle_range = Some((first, samples.len() - 1));
    }

    Ok(MissionTrace {
        samples,
        executions,
        idle_range,
        achieved,
        status,
    })
}
