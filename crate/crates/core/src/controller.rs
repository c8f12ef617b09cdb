//! Funnel controller synthesis and evaluation.
//!
//! Each task gets a freshly synthesized controller at its start time. Active
//! agents receive a tracking funnel around their distance to the target
//! center; every communication edge receives a relative-distance funnel. The
//! funnels are decaying exponentials whose rates are solved from endpoint
//! conditions: by the window close, active agents are within `sigma * r` of
//! the center and every edge is short enough that the whole fleet fits in the
//! target ball. A task whose window has not yet opened additionally gets a
//! lower funnel wall that keeps agents out of the target until the window
//! opens (the two-sided "approach then converge" regime).
//!
//! Forces blow up as an error nears its funnel wall, which is what keeps the
//! errors inside. Evaluation therefore clamps normalized errors a hair inside
//! the wall for integration, while the recorded-sample checks treat anything
//! past `1 - DOMAIN_GUARD` as a hard violation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{AgentState, CommGraph, Region, Scenario, Vector, ZERO_DIR_EPS};

/// Normalized errors at or past `1 - DOMAIN_GUARD` (in absolute value for the
/// two-sided transform) are reported as bound violations.
pub const DOMAIN_GUARD: f64 = 1e-9;

/// Clamp margin used when evaluating forces inside integrator stages, where a
/// trial state may transiently poke past a wall without the step being kept.
const CLAMP_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ControllerError {
    #[error("{value} outside the domain of the {kind:?} transform")]
    DomainError { kind: TransformKind, value: f64 },
    #[error("t = {t} precedes controller start t0 = {t0}")]
    TimeBeforeStart { t: f64, t0: f64 },
    #[error("{what}: normalized error {xi} at t = {t} violates its funnel bound")]
    BoundViolation { what: String, xi: f64, t: f64 },
    #[error("operation does not apply to a {0:?} controller")]
    WrongCase(CaseTag),
    #[error("window closes at {upper} but the task starts at {t0}")]
    DegenerateWindow { t0: f64, upper: f64 },
    #[error("agent {agent} starts {dist} from the center, inside radius {radius}; no approach funnel exists")]
    AgentInsideTarget { agent: usize, dist: f64, radius: f64 },
    #[error("agent {agent} is not tracked by this controller")]
    UntrackedAgent { agent: usize },
    #[error("edge index {index} out of range")]
    EdgeOutOfRange { index: usize },
    #[error("{what} must be positive, got {value}")]
    NonPositiveParam { what: String, value: f64 },
    #[error("sigma {sigma} outside (0, {bound}]")]
    SigmaOutOfRange { sigma: f64, bound: f64 },
    #[error("agent {agent}: gain {gain} does not exceed rate {rate}")]
    GainBelowRate { agent: usize, gain: f64, rate: f64 },
    #[error("fleet diameter bound {gamma_bar} below required {required}")]
    GammaBarTooSmall { gamma_bar: f64, required: f64 },
}

/// Error transforms mapping a normalized error to an unbounded quantity that
/// diverges at the funnel wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformKind {
    /// Domain [0, 1): one-sided wall at 1.
    Unilateral,
    /// Domain (-1, 1): walls on both sides.
    Bilateral,
}

/// Value and derivative of the transform at `z`.
pub fn transform(kind: TransformKind, z: f64) -> Result<(f64, f64), ControllerError> {
    let ok = match kind {
        TransformKind::Unilateral => (0.0..1.0).contains(&z),
        TransformKind::Bilateral => -1.0 < z && z < 1.0,
    };
    if !ok {
        return Err(ControllerError::DomainError { kind, value: z });
    }
    Ok(transform_unchecked(kind, z))
}

fn transform_unchecked(kind: TransformKind, z: f64) -> (f64, f64) {
    match kind {
        TransformKind::Unilateral => ((1.0 / (1.0 - z)).ln(), 1.0 / (1.0 - z)),
        TransformKind::Bilateral => (((1.0 + z) / (1.0 - z)).ln(), 2.0 / (1.0 - z * z)),
    }
}

fn transform_clamped(kind: TransformKind, z: f64) -> (f64, f64) {
    let z = match kind {
        TransformKind::Unilateral => z.clamp(0.0, 1.0 - CLAMP_MARGIN),
        TransformKind::Bilateral => z.clamp(-1.0 + CLAMP_MARGIN, 1.0 - CLAMP_MARGIN),
    };
    transform_unchecked(kind, z)
}

/// Free constants of the synthesis. The strict inequalities in the design
/// (initial bounds above initial errors, gains above rates) are realized as
/// multiplicative margins; all are configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Multiplier lifting each funnel's start value above the initial error.
    /// Larger values park the initial normalized errors deeper inside the
    /// walls, which softens the transient when the controller switches on
    /// and every funnel starts shrinking at once.
    pub margin: f64,
    /// Multiplier lifting velocity gains above the rates they must dominate.
    pub gain_margin: f64,
    /// Fraction of the initial clearance used as the approach half-width.
    /// This knob trades two transients against each other. At switch-on the
    /// corridor center drops at rate proportional to the approach rate times
    /// the distance while the agents still stand; a wide corridor gives the
    /// resulting lag room to turn around. But the wider the corridor, the
    /// larger the rate jump when the window opens and the convergence branch
    /// takes over. Mid-range values clear both; the extremes clear neither
    /// at the default step size.
    pub delta_frac: f64,
    /// Fraction of the admissible upper bound used for sigma.
    pub sigma_frac: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            margin: 2.5,
            gain_margin: 1.2,
            delta_frac: 0.7,
            sigma_frac: 0.9,
        }
    }
}

/// One task execution's timing and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWindow {
    pub task: usize,
    /// Mission time at which the controller takes over.
    pub t0: f64,
    /// Window opening; completion at or before this time is too early.
    pub lower: f64,
    /// Window close; completion must happen by here.
    pub upper: f64,
    #[serde(skip)]
    pub target: Option<Region>,
}

impl TaskWindow {
    pub fn new(task: usize, t0: f64, lower: f64, upper: f64, target: Region) -> Self {
        TaskWindow {
            task,
            t0,
            lower,
            upper,
            target: Some(target),
        }
    }

    pub fn target(&self) -> &Region {
        self.target.as_ref().expect("window carries its target region")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    /// Window already open at task start: single decaying upper funnel.
    CaseI,
    /// Window opens later: two-sided approach funnel, then convergence.
    CaseII,
    /// No task: consensus plus damping.
    Idle,
}

impl std::fmt::Display for CaseTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaseTag::CaseI => write!(f, "I"),
            CaseTag::CaseII => write!(f, "II"),
            CaseTag::Idle => write!(f, "idle"),
        }
    }
}

/// A task starting after its window opened needs no lower wall; one starting
/// before must be held out until the window opens.
pub fn classify_case(t0: f64, lower: f64) -> CaseTag {
    if lower <= t0 {
        CaseTag::CaseI
    } else {
        CaseTag::CaseII
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case1Tracking {
    pub beta0: f64,
    pub kappa1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case1Edge {
    pub edge: (usize, usize),
    pub gamma0: f64,
    pub mu1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case2Tracking {
    /// Half-width of the approach corridor around the initial distance.
    pub delta: f64,
    pub alpha0: f64,
    pub beta0: f64,
    /// Approach-branch rate; solved so the lower wall hits the target radius
    /// exactly when the window opens.
    pub kappa2: f64,
    /// Convergence-branch rate; solved so the upper wall hits `sigma * r`
    /// exactly at the window close.
    pub kappa3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case2Edge {
    pub edge: (usize, usize),
    pub gamma0: f64,
    /// Approach-branch rate, shared across edges (max of the active agents'
    /// approach rates) so edge funnels never outpace the tracking funnels.
    pub kappa_e2: f64,
    /// Convergence-branch rate.
    pub mu2: f64,
}

/// Immutable synthesized controller for one task execution (or idle phase).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskController {
    CaseI {
        window: TaskWindow,
        sigma: f64,
        gamma_bar: f64,
        /// Dominant decay rate; shared by the gain rule and the certificate.
        theta: f64,
        tracking: BTreeMap<usize, Case1Tracking>,
        edges: Vec<Case1Edge>,
        /// Velocity gain per agent (0-based indexing by agent - 1).
        gains: Vec<f64>,
    },
    CaseII {
        window: TaskWindow,
        sigma: f64,
        gamma_bar: f64,
        tracking: BTreeMap<usize, Case2Tracking>,
        edges: Vec<Case2Edge>,
        /// Per-agent approach-branch rate (active: own; passive: edge rate).
        approach_rates: Vec<f64>,
        /// Per-agent convergence-branch rate.
        converge_rates: Vec<f64>,
        gains: Vec<f64>,
    },
    Idle {
        kp: f64,
        kv: f64,
        edges: Vec<(usize, usize)>,
    },
}

/// Normalized errors of one sampled instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalizedErrors {
    /// Per active agent.
    pub tracking: BTreeMap<usize, f64>,
    /// Per edge, in the controller's edge order.
    pub edges: Vec<f64>,
}

/// Fleet diameter bound and contraction share used by every synthesis of a
/// mission: `gamma_bar` dominates all edge lengths at mission start and twice
/// the largest region radius (agents packed in a target ball keep edges under
/// `2 r_max`), so it stays valid at every later task start.
pub fn sigma_parameters(scenario: &Scenario, config: &SynthConfig) -> (f64, f64) {
    let max_edge = scenario
        .graph
        .edges()
        .iter()
        .map(|&(i, j)| (&scenario.init_pos[i - 1] - &scenario.init_pos[j - 1]).norm())
        .fold(0.0, f64::max);
    let gamma_bar = max_edge.max(2.0 * scenario.r_max);
    let n = scenario.agent_count() as f64;
    let sigma = config.sigma_frac * scenario.r_min / ((n - 1.0) * gamma_bar + scenario.r_min);
    (gamma_bar, sigma)
}

fn edge_initial(scenario: &Scenario, state: &AgentState, margin: f64) -> Vec<(usize, usize, f64)> {
    let n = scenario.agent_count() as f64;
    scenario
        .graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            let len = (&state.pos[i - 1] - &state.pos[j - 1]).norm();
            let gamma0 = margin * len.max(scenario.r_min / (n - 1.0));
            (i, j, gamma0)
        })
        .collect()
}

/// Single-funnel synthesis for a task whose window is already open.
pub fn synth_case1(
    state: &AgentState,
    window: &TaskWindow,
    scenario: &Scenario,
    config: &SynthConfig,
) -> Result<TaskController, ControllerError> {
    if !(window.upper > window.t0) {
        return Err(ControllerError::DegenerateWindow {
            t0: window.t0,
            upper: window.upper,
        });
    }
    if classify_case(window.t0, window.lower) != CaseTag::CaseI {
        return Err(ControllerError::WrongCase(CaseTag::CaseII));
    }
    let (gamma_bar, sigma) = sigma_parameters(scenario, config);
    let region = window.target();
    let horizon = window.upper - window.t0;
    let n = scenario.agent_count();

    let mut tracking = BTreeMap::new();
    for &agent in &scenario.active {
        let dist = (&state.pos[agent - 1] - &region.center).norm();
        let beta0 = config.margin * dist.max(sigma * region.radius);
        let kappa1 = (beta0 / (sigma * region.radius)).ln() / horizon;
        tracking.insert(agent, Case1Tracking { beta0, kappa1 });
    }

    let mut edges = Vec::new();
    for (i, j, gamma0) in edge_initial(scenario, state, config.margin) {
        let mu1 = ((n as f64 - 1.0) * gamma0 / ((1.0 - sigma) * scenario.r_min)).ln() / horizon;
        edges.push(Case1Edge { edge: (i, j), gamma0, mu1 });
    }

    let theta = tracking
        .values()
        .map(|t| t.kappa1)
        .chain(edges.iter().map(|e| e.mu1))
        .fold(0.0, f64::max);
    let gains = vec![config.gain_margin * theta; n];

    Ok(TaskController::CaseI {
        window: window.clone(),
        sigma,
        gamma_bar,
        theta,
        tracking,
        edges,
        gains,
    })
}

/// Two-branch synthesis for a task whose window opens in the future.
pub fn synth_case2(
    state: &AgentState,
    window: &TaskWindow,
    scenario: &Scenario,
    config: &SynthConfig,
) -> Result<TaskController, ControllerError> {
    if !(window.upper > window.t0) {
        return Err(ControllerError::DegenerateWindow {
            t0: window.t0,
            upper: window.upper,
        });
    }
    if classify_case(window.t0, window.lower) != CaseTag::CaseII {
        return Err(ControllerError::WrongCase(CaseTag::CaseI));
    }
    let (gamma_bar, sigma) = sigma_parameters(scenario, config);
    let region = window.target();
    let approach = window.lower - window.t0;
    let converge = window.upper - window.lower;
    let n = scenario.agent_count();

    let mut tracking = BTreeMap::new();
    for &agent in &scenario.active {
        let dist = (&state.pos[agent - 1] - &region.center).norm();
        if dist <= region.radius {
            return Err(ControllerError::AgentInsideTarget {
                agent,
                dist,
                radius: region.radius,
            });
        }
        let delta = config.delta_frac * (dist - region.radius);
        let alpha0 = dist - delta;
        let beta0 = dist + delta;
        let kappa2 = (alpha0 / region.radius).ln() / approach;
        let kappa3 = (beta0 / (sigma * alpha0)).ln() / converge;
        tracking.insert(
            agent,
            Case2Tracking { delta, alpha0, beta0, kappa2, kappa3 },
        );
    }

    let kappa_e2 = tracking.values().map(|t| t.kappa2).fold(0.0, f64::max);
    let kappa_e3 = tracking.values().map(|t| t.kappa3).fold(0.0, f64::max);

    let mut edges = Vec::new();
    for (i, j, gamma0) in edge_initial(scenario, state, config.margin) {
        let mu2 = ((n as f64 - 1.0) * gamma0 / ((1.0 - sigma) * scenario.r_min)).ln() / converge;
        edges.push(Case2Edge { edge: (i, j), gamma0, kappa_e2, mu2 });
    }

    let approach_rates: Vec<f64> = (1..=n)
        .map(|i| tracking.get(&i).map_or(kappa_e2, |t| t.kappa2))
        .collect();
    let converge_rates: Vec<f64> = (1..=n)
        .map(|i| tracking.get(&i).map_or(kappa_e3, |t| t.kappa3))
        .collect();
    let gains: Vec<f64> = approach_rates
        .iter()
        .zip(&converge_rates)
        .map(|(a, c)| config.gain_margin * a.max(*c))
        .collect();

    Ok(TaskController::CaseII {
        window: window.clone(),
        sigma,
        gamma_bar,
        tracking,
        edges,
        approach_rates,
        converge_rates,
        gains,
    })
}

/// Consensus plus damping, applied between and after tasks.
pub fn idle_control(state: &AgentState, kp: f64, kv: f64, graph: &CommGraph) -> Vec<Vector> {
    let mut u: Vec<Vector> = state.vel.iter().map(|v| -kv * v).collect();
    for &(i, j) in graph.edges() {
        let d = &state.pos[i - 1] - &state.pos[j - 1];
        u[i - 1] -= kp * &d;
        u[j - 1] += kp * &d;
    }
    u
}

impl TaskController {
    pub fn case_tag(&self) -> CaseTag {
        match self {
            TaskController::CaseI { .. } => CaseTag::CaseI,
            TaskController::CaseII { .. } => CaseTag::CaseII,
            TaskController::Idle { .. } => CaseTag::Idle,
        }
    }

    pub fn window(&self) -> Option<&TaskWindow> {
        match self {
            TaskController::CaseI { window, .. } | TaskController::CaseII { window, .. } => {
                Some(window)
            }
            TaskController::Idle { .. } => None,
        }
    }

    pub fn gains(&self) -> &[f64] {
        match self {
            TaskController::CaseI { gains, .. } | TaskController::CaseII { gains, .. } => gains,
            TaskController::Idle { .. } => &[],
        }
    }

    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        match self {
            TaskController::CaseI { edges, .. } => edges.iter().map(|e| e.edge).collect(),
            TaskController::CaseII { edges, .. } => edges.iter().map(|e| e.edge).collect(),
            TaskController::Idle { edges, .. } => edges.clone(),
        }
    }

    pub fn tracked_agents(&self) -> Vec<usize> {
        match self {
            TaskController::CaseI { tracking, .. } => tracking.keys().copied().collect(),
            TaskController::CaseII { tracking, .. } => tracking.keys().copied().collect(),
            TaskController::Idle { .. } => Vec::new(),
        }
    }

    fn check_time(&self, t: f64) -> Result<(), ControllerError> {
        if let Some(w) = self.window() {
            if t < w.t0 {
                return Err(ControllerError::TimeBeforeStart { t, t0: w.t0 });
            }
        }
        Ok(())
    }

    /// Tracking funnel walls `(lower, upper)` for an active agent at time `t`.
    pub fn agent_bounds(&self, agent: usize, t: f64) -> Result<(f64, f64), ControllerError> {
        self.check_time(t)?;
        match self {
            TaskController::CaseI { window, tracking, .. } => {
                let tr = tracking
                    .get(&agent)
                    .ok_or(ControllerError::UntrackedAgent { agent })?;
                Ok((0.0, tr.beta0 * (-tr.kappa1 * (t - window.t0)).exp()))
            }
            TaskController::CaseII { window, tracking, .. } => {
                let tr = tracking
                    .get(&agent)
                    .ok_or(ControllerError::UntrackedAgent { agent })?;
                let r = window.target().radius;
                if t <= window.lower {
                    let decay = (-tr.kappa2 * (t - window.t0)).exp();
                    Ok((tr.alpha0 * decay, tr.beta0 * decay))
                } else {
                    let decay = (-tr.kappa3 * (t - window.lower)).exp();
                    Ok((r * decay, tr.beta0 * r / tr.alpha0 * decay))
                }
            }
            TaskController::Idle { .. } => Err(ControllerError::WrongCase(CaseTag::Idle)),
        }
    }

    /// Edge funnel wall at time `t`, by edge index in `edge_list` order.
    pub fn edge_bound(&self, index: usize, t: f64) -> Result<f64, ControllerError> {
        self.check_time(t)?;
        match self {
            TaskController::CaseI { window, edges, .. } => {
                let e = edges
                    .get(index)
                    .ok_or(ControllerError::EdgeOutOfRange { index })?;
                Ok(e.gamma0 * (-e.mu1 * (t - window.t0)).exp())
            }
            TaskController::CaseII { window, edges, .. } => {
                let e = edges
                    .get(index)
                    .ok_or(ControllerError::EdgeOutOfRange { index })?;
                if t <= window.lower {
                    Ok(e.gamma0 * (-e.kappa_e2 * (t - window.t0)).exp())
                } else {
                    let knot = e.gamma0 * (-e.kappa_e2 * (window.lower - window.t0)).exp();
                    Ok(knot * (-e.mu2 * (t - window.lower)).exp())
                }
            }
            TaskController::Idle { .. } => Err(ControllerError::WrongCase(CaseTag::Idle)),
        }
    }

    /// Normalized tracking and edge errors at a sampled instant, with hard
    /// bound checking: any error at or past `1 - DOMAIN_GUARD` (absolute
    /// value for the two-sided case) is a violation.
    pub fn normalized_errors(
        &self,
        state: &AgentState,
        t: f64,
    ) -> Result<NormalizedErrors, ControllerError> {
        self.check_time(t)?;
        let mut out = NormalizedErrors::default();
        let window = match self.window() {
            Some(w) => w,
            None => return Ok(out),
        };
        let center = &window.target().center;
        for agent in self.tracked_agents() {
            let dist = (&state.pos[agent - 1] - center).norm();
            let (lo, hi) = self.agent_bounds(agent, t)?;
            let xi = match self {
                TaskController::CaseI { .. } => dist / hi,
                TaskController::CaseII { .. } => {
                    let rho = (hi + lo) / 2.0;
                    let delta = (hi - lo) / 2.0;
                    (dist - rho) / delta
                }
                TaskController::Idle { .. } => unreachable!(),
            };
            let violated = match self {
                TaskController::CaseI { .. } => xi >= 1.0 - DOMAIN_GUARD,
                _ => xi.abs() >= 1.0 - DOMAIN_GUARD,
            };
            if violated {
                return Err(ControllerError::BoundViolation {
                    what: format!("agent {agent} tracking"),
                    xi,
                    t,
                });
            }
            out.tracking.insert(agent, xi);
        }
        for (index, (i, j)) in self.edge_list().into_iter().enumerate() {
            let len = (&state.pos[i - 1] - &state.pos[j - 1]).norm();
            let gamma = self.edge_bound(index, t)?;
            let xi = len / gamma;
            if xi >= 1.0 - DOMAIN_GUARD {
                return Err(ControllerError::BoundViolation {
                    what: format!("edge ({i}, {j})"),
                    xi,
                    t,
                });
            }
            out.edges.push(xi);
        }
        Ok(out)
    }

    /// Control forces with wall clamping, defined for any state. Integrator
    /// stages use this directly; sampled evaluation goes through
    /// [`TaskController::control_input`] so violations surface as errors.
    pub fn control_force_raw(&self, state: &AgentState, t: f64) -> Vec<Vector> {
        let n = state.agent_count();
        let dim = state.pos[0].len();
        match self {
            TaskController::Idle { kp, kv, edges } => {
                let mut u: Vec<Vector> = state.vel.iter().map(|v| -*kv * v).collect();
                for &(i, j) in edges {
                    let d = &state.pos[i - 1] - &state.pos[j - 1];
                    u[i - 1] -= *kp * &d;
                    u[j - 1] += *kp * &d;
                }
                u
            }
            _ => {
                let mut u: Vec<Vector> = (0..n).map(|_| Vector::zeros(dim)).collect();
                for (index, (i, j)) in self.edge_list().into_iter().enumerate() {
                    let d = &state.pos[i - 1] - &state.pos[j - 1];
                    let len = d.norm();
                    if len < ZERO_DIR_EPS {
                        continue;
                    }
                    let gamma = self
                        .edge_bound(index, t)
                        .expect("edge bound defined for t >= t0");
                    let (val, grad) = transform_clamped(TransformKind::Unilateral, len / gamma);
                    let force = (grad * val / gamma) * (d / len);
                    u[i - 1] -= &force;
                    u[j - 1] += &force;
                }
                let window = self.window().expect("task controller has a window");
                let center = &window.target().center;
                for agent in self.tracked_agents() {
                    let y = &state.pos[agent - 1] - center;
                    let dist = y.norm();
                    if dist < ZERO_DIR_EPS {
                        continue;
                    }
                    let (lo, hi) = self
                        .agent_bounds(agent, t)
                        .expect("tracking bound defined for t >= t0");
                    let force = match self {
                        TaskController::CaseI { .. } => {
                            let (val, grad) =
                                transform_clamped(TransformKind::Unilateral, dist / hi);
                            (grad * val / hi) * (y / dist)
                        }
                        TaskController::CaseII { .. } => {
                            let rho = (hi + lo) / 2.0;
                            let delta = (hi - lo) / 2.0;
                            let (val, grad) =
                                transform_clamped(TransformKind::Bilateral, (dist - rho) / delta);
                            (grad * val / delta) * (y / dist)
                        }
                        TaskController::Idle { .. } => unreachable!(),
                    };
                    u[agent - 1] -= &force;
                }
                let gains = self.gains();
                for i in 0..n {
                    u[i] -= gains[i] * &state.vel[i];
                }
                u
            }
        }
    }

    /// Control forces at a sampled instant; errors if any funnel is violated.
    pub fn control_input(
        &self,
        state: &AgentState,
        t: f64,
    ) -> Result<Vec<Vector>, ControllerError> {
        self.normalized_errors(state, t)?;
        Ok(self.control_force_raw(state, t))
    }

    /// Audits the synthesized constants: positive bounds and rates, sigma
    /// within its admissible range, gains strictly above every rate that
    /// applies to the agent, and the fleet-diameter bound large enough.
    pub fn validate(&self, scenario: &Scenario) -> Result<(), Vec<ControllerError>> {
        let mut errors = Vec::new();
        fn positive_into(errors: &mut Vec<ControllerError>, what: &str, value: f64) {
            if !(value > 0.0) {
                errors.push(ControllerError::NonPositiveParam {
                    what: what.into(),
                    value,
                });
            }
        }
        match self {
            TaskController::CaseI { sigma, gamma_bar, tracking, edges, gains, .. } => {
                for (agent, tr) in tracking {
                    positive_into(&mut errors, &format!("agent {agent} beta0"), tr.beta0);
                    positive_into(&mut errors, &format!("agent {agent} kappa1"), tr.kappa1);
                }
                for e in edges {
                    positive_into(&mut errors, &format!("edge {:?} gamma0", e.edge), e.gamma0);
                    positive_into(&mut errors, &format!("edge {:?} mu1", e.edge), e.mu1);
                }
                check_sigma(*sigma, *gamma_bar, scenario, &mut errors);
                for (idx, &gain) in gains.iter().enumerate() {
                    let agent = idx + 1;
                    let mut applicable: Vec<f64> = edges
                        .iter()
                        .filter(|e| e.edge.0 == agent || e.edge.1 == agent)
                        .map(|e| e.mu1)
                        .collect();
                    if let Some(tr) = tracking.get(&agent) {
                        applicable.push(tr.kappa1);
                    }
                    for rate in applicable {
                        if !(gain > rate) {
                            errors.push(ControllerError::GainBelowRate { agent, gain, rate });
                        }
                    }
                }
            }
            TaskController::CaseII {
                sigma,
                gamma_bar,
                tracking,
                edges,
                approach_rates,
                converge_rates,
                gains,
                ..
            } => {
                for (agent, tr) in tracking {
                    positive_into(&mut errors, &format!("agent {agent} delta"), tr.delta);
                    positive_into(&mut errors, &format!("agent {agent} alpha0"), tr.alpha0);
                    positive_into(&mut errors, &format!("agent {agent} beta0"), tr.beta0);
                    positive_into(&mut errors, &format!("agent {agent} kappa2"), tr.kappa2);
                    positive_into(&mut errors, &format!("agent {agent} kappa3"), tr.kappa3);
                    if !(tr.beta0 > tr.alpha0) {
                        errors.push(ControllerError::NonPositiveParam {
                            what: format!("agent {agent} corridor width"),
                            value: tr.beta0 - tr.alpha0,
                        });
                    }
                }
                for e in edges {
                    positive_into(&mut errors, &format!("edge {:?} gamma0", e.edge), e.gamma0);
                    positive_into(&mut errors, &format!("edge {:?} kappa_e2", e.edge), e.kappa_e2);
                    positive_into(&mut errors, &format!("edge {:?} mu2", e.edge), e.mu2);
                }
                check_sigma(*sigma, *gamma_bar, scenario, &mut errors);
                for (idx, &gain) in gains.iter().enumerate() {
                    let agent = idx + 1;
                    for rate in [approach_rates[idx], converge_rates[idx]] {
                        if !(gain > rate) {
                            errors.push(ControllerError::GainBelowRate { agent, gain, rate });
                        }
                    }
                }
            }
            TaskController::Idle { kp, kv, .. } => {
                positive_into(&mut errors, "kp", *kp);
                positive_into(&mut errors, "kv", *kv);
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

fn check_sigma(sigma: f64, gamma_bar: f64, scenario: &Scenario, errors: &mut Vec<ControllerError>) {
    let n = scenario.agent_count() as f64;
    let bound = scenario.r_min / ((n - 1.0) * gamma_bar + scenario.r_min);
    if !(sigma > 0.0 && sigma <= bound) {
        errors.push(ControllerError::SigmaOutOfRange { sigma, bound });
    }
    let required = 2.0 * scenario.r_max;
    if gamma_bar < required {
        errors.push(ControllerError::GammaBarTooSmall { gamma_bar, required });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::validate_scenario;
    use crate::testutil::{raw_with, reference_scenario, task};
    use approx::assert_relative_eq;

    #[test]
    fn transform_reference_values() {
        assert_eq!(transform(TransformKind::Unilateral, 0.0).unwrap(), (0.0, 1.0));
        assert_eq!(transform(TransformKind::Bilateral, 0.0).unwrap(), (0.0, 2.0));
        let (val, grad) = transform(TransformKind::Unilateral, 0.5).unwrap();
        assert_eq!(val, 2.0_f64.ln());
        assert_relative_eq!(val, 0.69315, max_relative = 1e-4);
        assert_eq!(grad, 2.0);
    }

    #[test]
    fn transform_rejects_out_of_domain() {
        for bad in [1.0, 1.5, -0.1] {
            assert!(matches!(
                transform(TransformKind::Unilateral, bad),
                Err(ControllerError::DomainError { .. })
            ));
        }
        for bad in [1.0, -1.0, 2.0] {
            assert!(matches!(
                transform(TransformKind::Bilateral, bad),
                Err(ControllerError::DomainError { .. })
            ));
        }
    }

    #[test]
    fn bilateral_transform_is_odd() {
        for z in [0.1, 0.5, 0.9, 0.999] {
            let (pos, _) = transform(TransformKind::Bilateral, z).unwrap();
            let (neg, _) = transform(TransformKind::Bilateral, -z).unwrap();
            assert_relative_eq!(neg, -pos, max_relative = 1e-14);
        }
    }

    #[test]
    fn case_classification() {
        assert_eq!(classify_case(0.0, 0.0), CaseTag::CaseI);
        assert_eq!(classify_case(5.0, 9.0), CaseTag::CaseII);
        assert_eq!(classify_case(10.0, 5.0), CaseTag::CaseI);
    }

    /// Two agents, one edge; agent 1 active, far enough out for a clean
    /// single-funnel synthesis with the window already open.
    fn open_window_setup() -> (Scenario, TaskWindow) {
        let raw = raw_with(
            &[[0.0, 0.0], [1.0, 0.0]],
            &[[1, 2]],
            &[1],
            vec![task([8.0, 6.0], 1.2, vec![20.0, 0.0], vec![-20.0, 10.0])],
        );
        let scenario = validate_scenario(&raw).unwrap();
        let window = TaskWindow::new(1, 0.0, 0.0, 20.0, scenario.tasks[0].region.clone());
        (scenario, window)
    }

    #[test]
    fn open_window_synthesis_matches_direct_formulas() {
        let (scenario, window) = open_window_setup();
        // Start margin pinned: the transcription below spells it as 1.5.
        let config = SynthConfig { margin: 1.5, ..SynthConfig::default() };
        let state = scenario.initial_state();
        let ctrl = synth_case1(&state, &window, &scenario, &config).unwrap();

        // Direct transcription of the synthesis rules, kept independent of
        // the implementation above.
        let gamma_bar = 1.0_f64.max(2.0 * 1.5);
        let sigma = 0.9 * 1.0 / ((2.0 - 1.0) * gamma_bar + 1.0);
        let dist = (8.0_f64 * 8.0 + 6.0 * 6.0).sqrt();
        let beta0 = 1.5 * dist.max(sigma * 1.2);
        let kappa1 = (beta0 / (sigma * 1.2)).ln() / 20.0;
        let gamma0 = 1.5 * 1.0_f64.max(1.0 / 1.0);
        let mu1 = ((2.0 - 1.0) * gamma0 / ((1.0 - sigma) * 1.0)).ln() / 20.0;

        match &ctrl {
            TaskController::CaseI { sigma: s, gamma_bar: g, theta, tracking, edges, gains, .. } => {
                assert_eq!(*s, sigma);
                assert_eq!(*g, gamma_bar);
                let tr = &tracking[&1];
                assert_eq!(tr.beta0, beta0);
                assert_eq!(tr.kappa1, kappa1);
                assert_eq!(edges[0].gamma0, gamma0);
                assert_eq!(edges[0].mu1, mu1);
                assert_eq!(*theta, kappa1.max(mu1));
                assert_eq!(gains[0], 1.2 * *theta);
                assert_eq!(gains[1], 1.2 * *theta);
            }
            _ => panic!("expected a single-funnel controller"),
        }
        assert!(ctrl.validate(&scenario).is_ok());
    }

    #[test]
    fn rate_formula_anchor_values() {
        // beta0 = 12, floor 0.5 * 1, horizon 10.
        assert_relative_eq!(
            (12.0_f64 / 0.5).ln() / 10.0,
            0.3178053830347946,
            max_relative = 1e-15
        );
        // 3 edges-worth: (4 - 1) * 2 / ((1 - 0.5) * 1) = 12 over horizon 10.
        assert_relative_eq!(
            (3.0_f64 * 2.0 / 0.5).ln() / 10.0,
            0.24849066497880004,
            max_relative = 1e-15
        );
    }

    #[test]
    fn open_window_endpoints_hit_their_targets() {
        let (scenario, window) = open_window_setup();
        let ctrl = synth_case1(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        let (sigma, n) = match &ctrl {
            TaskController::CaseI { sigma, .. } => (*sigma, 2.0),
            _ => unreachable!(),
        };
        let (lo, hi) = ctrl.agent_bounds(1, 20.0).unwrap();
        assert_eq!(lo, 0.0);
        assert_relative_eq!(hi, sigma * 1.2, max_relative = 1e-12);
        let gamma = ctrl.edge_bound(0, 20.0).unwrap();
        assert_relative_eq!(gamma, (1.0 - sigma) * 1.0 / (n - 1.0), max_relative = 1e-12);
        // Whole-fleet containment at the close: worst-case chain of edges
        // plus the tracking radius stays inside the target.
        assert!((n - 1.0) * gamma + sigma * 1.2 <= 1.2);
    }

    /// Agent 1 exactly 5 units from the target center, window (4, 12].
    fn future_window_setup() -> (Scenario, TaskWindow) {
        let raw = raw_with(
            &[[1.0, 0.0], [0.0, 1.0]],
            &[[1, 2]],
            &[1],
            vec![task([6.0, 0.0], 1.0, vec![12.0, 4.0, 0.0], vec![-20.0, 10.0, 5.0])],
        );
        let scenario = validate_scenario(&raw).unwrap();
        let window = TaskWindow::new(1, 0.0, 4.0, 12.0, scenario.tasks[0].region.clone());
        (scenario, window)
    }

    #[test]
    fn future_window_synthesis_frozen_values() {
        let (scenario, window) = future_window_setup();
        // Half-width fraction pinned so the hand-computed corridor below
        // stays valid whatever the default becomes.
        let cfg = SynthConfig { delta_frac: 0.5, ..SynthConfig::default() };
        let ctrl = synth_case2(&scenario.initial_state(), &window, &scenario, &cfg).unwrap();
        match &ctrl {
            TaskController::CaseII { tracking, .. } => {
                let tr = &tracking[&1];
                // dist 5, radius 1, half fraction: corridor (3, 7).
                assert_eq!(tr.delta, 2.0);
                assert_eq!(tr.alpha0, 3.0);
                assert_eq!(tr.beta0, 7.0);
                assert_eq!(tr.kappa2, 3.0_f64.ln() / 4.0);
                assert_relative_eq!(tr.kappa2, 0.27465307216702745, max_relative = 1e-15);
            }
            _ => panic!("expected a two-branch controller"),
        }
        assert!(ctrl.validate(&scenario).is_ok());
    }

    #[test]
    fn future_window_walls_are_continuous_and_anchored() {
        let (scenario, window) = future_window_setup();
        let ctrl = synth_case2(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        // Lower wall reaches the target radius exactly at the opening.
        let (lo_at_open, hi_at_open) = ctrl.agent_bounds(1, 4.0).unwrap();
        assert_relative_eq!(lo_at_open, 1.0, max_relative = 1e-12);
        // Second branch starts where the first ends.
        let (lo_after, hi_after) = ctrl.agent_bounds(1, 4.0 + 1e-13).unwrap();
        assert_relative_eq!(lo_after, lo_at_open, max_relative = 1e-9);
        assert_relative_eq!(hi_after, hi_at_open, max_relative = 1e-9);
        // Upper wall reaches sigma * r at the close.
        let sigma = match &ctrl {
            TaskController::CaseII { sigma, .. } => *sigma,
            _ => unreachable!(),
        };
        let (_, hi_close) = ctrl.agent_bounds(1, 12.0).unwrap();
        assert_relative_eq!(hi_close, sigma * 1.0, max_relative = 1e-12);
        // Edge funnel is continuous across the knot.
        let g_before = ctrl.edge_bound(0, 4.0).unwrap();
        let g_after = ctrl.edge_bound(0, 4.0 + 1e-13).unwrap();
        assert_relative_eq!(g_after, g_before, max_relative = 1e-9);
    }

    #[test]
    fn future_window_error_centered_at_start() {
        let (scenario, window) = future_window_setup();
        let ctrl = synth_case2(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        let errs = ctrl.normalized_errors(&scenario.initial_state(), 0.0).unwrap();
        // Corridor is centered on the initial distance: (3 + 7) / 2 = 5.
        assert_eq!(errs.tracking[&1], 0.0);
    }

    #[test]
    fn future_window_rejects_agent_already_inside() {
        let (scenario, mut window) = future_window_setup();
        window.target = Some(Region {
            center: Vector::from_vec(vec![1.0, 0.5]),
            radius: 1.0,
        });
        let err = synth_case2(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ControllerError::AgentInsideTarget { agent: 1, .. }));
    }

    #[test]
    fn degenerate_window_is_rejected() {
        let (scenario, mut window) = open_window_setup();
        window.t0 = 25.0;
        window.lower = 0.0;
        let err = synth_case1(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ControllerError::DegenerateWindow { .. }));
    }

    #[test]
    fn bound_query_before_start_fails() {
        let (scenario, mut window) = open_window_setup();
        window.t0 = 2.0;
        let ctrl = synth_case1(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        assert!(matches!(
            ctrl.agent_bounds(1, 1.0),
            Err(ControllerError::TimeBeforeStart { .. })
        ));
    }

    #[test]
    fn wall_contact_is_a_violation() {
        let (scenario, window) = open_window_setup();
        let ctrl = synth_case1(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        let mut state = scenario.initial_state();
        // Push the active agent far past its funnel start.
        state.pos[0] = Vector::from_vec(vec![-40.0, -40.0]);
        let err = ctrl.normalized_errors(&state, 0.0).unwrap_err();
        assert!(matches!(err, ControllerError::BoundViolation { .. }));
    }

    #[test]
    fn control_matches_independent_transcription() {
        let (scenario, window) = open_window_setup();
        let config = SynthConfig::default();
        let state = AgentState::new(
            vec![
                Vector::from_vec(vec![1.0, 1.0]),
                Vector::from_vec(vec![1.5, 0.5]),
            ],
            vec![
                Vector::from_vec(vec![0.1, -0.2]),
                Vector::from_vec(vec![0.0, 0.3]),
            ],
        );
        let ctrl = synth_case1(&scenario.initial_state(), &window, &scenario, &config).unwrap();
        let t = 1.25;
        let u = ctrl.control_input(&state, t).unwrap();

        // Straight-line transcription of the control law, written against
        // the synthesized constants rather than the implementation.
        let (beta0, kappa1, gamma0, mu1, k) = match &ctrl {
            TaskController::CaseI { tracking, edges, gains, .. } => (
                tracking[&1].beta0,
                tracking[&1].kappa1,
                edges[0].gamma0,
                edges[0].mu1,
                gains[0],
            ),
            _ => unreachable!(),
        };
        let c = Vector::from_vec(vec![8.0, 6.0]);
        let d = &state.pos[0] - &state.pos[1];
        let len = d.norm();
        let gamma = gamma0 * (-mu1 * t).exp();
        let xi_e = len / gamma;
        let edge_force = (1.0 / gamma) * (1.0 / (1.0 - xi_e)) * (1.0 / (1.0 - xi_e)).ln()
            * (&d / len);
        let y = &state.pos[0] - &c;
        let dist = y.norm();
        let beta = beta0 * (-kappa1 * t).exp();
        let xi_a = dist / beta;
        let track_force = (1.0 / beta) * (1.0 / (1.0 - xi_a)) * (1.0 / (1.0 - xi_a)).ln()
            * (&y / dist);
        let expect0 = -&edge_force - &track_force - k * &state.vel[0];
        let expect1 = &edge_force - k * &state.vel[1];

        assert_relative_eq!((&u[0] - &expect0).norm(), 0.0, epsilon = 1e-13);
        assert_relative_eq!((&u[1] - &expect1).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn edge_forces_cancel_pairwise() {
        let (scenario, window) = open_window_setup();
        let ctrl = synth_case1(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        // Put the active agent on the center so only edge forces remain.
        let state = AgentState::new(
            vec![
                Vector::from_vec(vec![8.0, 6.0]),
                Vector::from_vec(vec![8.4, 6.3]),
            ],
            vec![Vector::zeros(2), Vector::zeros(2)],
        );
        let u = ctrl.control_force_raw(&state, 0.5);
        let total = &u[0] + &u[1];
        assert_eq!(total[0], 0.0);
        assert_eq!(total[1], 0.0);
    }

    #[test]
    fn passive_agent_at_rest_on_coincident_neighbors_gets_zero_input() {
        let (scenario, window) = open_window_setup();
        let ctrl = synth_case1(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        let p = Vector::from_vec(vec![2.0, 3.0]);
        let state = AgentState::new(vec![p.clone(), p], vec![Vector::zeros(2), Vector::zeros(2)]);
        let u = ctrl.control_force_raw(&state, 0.0);
        assert_eq!(u[1].norm(), 0.0);
    }

    #[test]
    fn centered_isolated_agent_gets_zero_input() {
        // Single agent, no edges, window in the future, sitting exactly at
        // the corridor midline with zero velocity.
        let raw = raw_with(
            &[[1.0, 0.0]],
            &[],
            &[1],
            vec![task([6.0, 0.0], 1.0, vec![12.0, 4.0, 0.0], vec![-20.0, 10.0, 5.0])],
        );
        let scenario = validate_scenario(&raw).unwrap();
        let window = TaskWindow::new(1, 0.0, 4.0, 12.0, scenario.tasks[0].region.clone());
        let ctrl = synth_case2(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        let u = ctrl.control_input(&scenario.initial_state(), 0.0).unwrap();
        assert_eq!(u[0].norm(), 0.0);
    }

    #[test]
    fn idle_control_consensus_examples() {
        let s = reference_scenario();
        let p = Vector::from_vec(vec![1.0, 2.0]);
        let rest = AgentState::new(
            vec![p.clone(), p.clone(), p.clone(), p.clone()],
            vec![Vector::zeros(2); 4],
        );
        for u in idle_control(&rest, 1.0, 2.0, &s.graph) {
            assert_eq!(u.norm(), 0.0);
        }

        let raw = raw_with(
            &[[1.0, 0.0], [0.0, 0.0]],
            &[[1, 2]],
            &[1],
            vec![task([8.0, 6.0], 1.2, vec![20.0, 0.0], vec![-20.0, 10.0])],
        );
        let two = validate_scenario(&raw).unwrap();
        let state = two.initial_state();
        let u = idle_control(&state, 0.7, 2.0, &two.graph);
        let d = &state.pos[0] - &state.pos[1];
        assert_eq!(u[0], -0.7 * &d);
        assert_eq!(u[1], 0.7 * &d);

        let moving = AgentState::new(
            vec![Vector::zeros(2), Vector::zeros(2)],
            vec![Vector::from_vec(vec![0.4, -1.0]), Vector::zeros(2)],
        );
        let u = idle_control(&moving, 1.0, 2.0, &two.graph);
        assert_eq!(u[0], -2.0 * &moving.vel[0]);
    }

    #[test]
    fn corrupted_gains_fail_validation() {
        let (scenario, window) = open_window_setup();
        let mut ctrl = synth_case1(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        if let TaskController::CaseI { gains, theta, .. } = &mut ctrl {
            gains[0] = *theta * 0.5;
        }
        let errors = ctrl.validate(&scenario).unwrap_err();
        assert!(errors
            .iter()
            .any(|e| matches!(e, ControllerError::GainBelowRate { agent: 1, .. })));
    }

    #[test]
    fn corrupted_sigma_fails_validation() {
        let (scenario, window) = open_window_setup();
        let mut ctrl = synth_case1(
            &scenario.initial_state(),
            &window,
            &scenario,
            &SynthConfig::default(),
        )
        .unwrap();
        if let TaskController::CaseI { sigma, .. } = &mut ctrl {
            *sigma = 0.9;
        }
        let errors = ctrl.validate(&scenario).unwrap_err();
        assert!(errors
            .iter()
            .any(|e| matches!(e, ControllerError::SigmaOutOfRange { .. })));
    }
}
