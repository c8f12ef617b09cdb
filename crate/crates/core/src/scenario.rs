//! Scenario model: regions of interest, task QoS structures, the communication
//! graph, and validation of the whole instance.
//!
//! A scenario is immutable once it has passed [`validate_scenario`]; every
//! downstream stage (scheduler, controller synthesis, simulation, verification)
//! assumes the invariants established here and does not re-check them.

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::formats::{RawBox, RawScenario};

/// Position/velocity/acceleration vector in R^n.
pub type Vector = DVector<f64>;

/// Directions below this norm are treated as zero (no unit vector).
pub const ZERO_DIR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScenarioError {
    #[error("dimension must be at least 1")]
    BadDimension,
    #[error("scenario has no agents")]
    MissingAgents,
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("{what} contains a non-finite value")]
    NonFinite { what: String },
    #[error("edge ({0}, {1}) references an agent outside 1..=N", edge.0, edge.1)]
    EdgeIndexOutOfRange { edge: (usize, usize) },
    #[error("edge ({0}, {0}) is a self-loop", agent)]
    SelfLoop { agent: usize },
    #[error("duplicate edge ({0}, {1})", edge.0, edge.1)]
    DuplicateEdge { edge: (usize, usize) },
    #[error("communication graph is not connected")]
    DisconnectedGraph,
    #[error("active agent set is empty")]
    EmptyActiveSet,
    #[error("active agent {agent} is outside 1..=N")]
    ActiveIndexOutOfRange { agent: usize },
    #[error("radius bounds must satisfy 0 < r_min < r_max, got [{r_min}, {r_max}]")]
    BadRadiusBounds { r_min: f64, r_max: f64 },
    #[error("alpha must lie in [0, 1], got {alpha}")]
    BadAlpha { alpha: f64 },
    #[error("task {task}: radius {radius} outside [r_min, r_max]")]
    RadiusOutOfRange { task: usize, radius: f64 },
    #[error("task {task}: malformed boundaries ({reason})")]
    MalformedBoundaries { task: usize, reason: String },
    #[error("task {task}: rejection reward {reward} must be negative")]
    BadRejectionPenalty { task: usize, reward: f64 },
    /// Set index 0 is the initial agent configuration, 1..=M are task regions.
    #[error("set {set_a} intersects set {set_b} (set 0 is the start positions, set k is task k's region)")]
    DisjointnessViolation { set_a: usize, set_b: usize },
    #[error("agent index {index} outside 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("init_box is malformed (needs lo < hi per coordinate, matching dimension)")]
    BadInitBox,
}

/// Closed ball `{ p : ||p - center|| <= radius }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub center: Vector,
    pub radius: f64,
}

impl Region {
    /// Membership in the closed ball. Points exactly on the boundary count.
    pub fn contains(&self, point: &Vector) -> Result<bool, ScenarioError> {
        if point.len() != self.center.len() {
            return Err(ScenarioError::DimensionMismatch {
                what: "point".into(),
                expected: self.center.len(),
                got: point.len(),
            });
        }
        Ok((point - &self.center).norm() <= self.radius)
    }
}

/// Membership test as a free operation; see [`Region::contains`].
pub fn region_contains(region: &Region, point: &Vector) -> Result<bool, ScenarioError> {
    region.contains(point)
}

/// One task: a region of interest plus its QoS ladder.
///
/// `boundaries` is the full descending sequence `t^0 = deadline > t^1 > ... >
/// t^{k-1} = 0`. QoS level 0 is rejection; level `q >= 1` names the half-open
/// completion interval `(boundaries[q], boundaries[q-1]]`. `rewards[q]` pays
/// for level `q`; `rewards[0]` is the (negative) rejection penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: usize,
    pub region: Region,
    pub deadline: f64,
    pub boundaries: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl TaskSpec {
    /// Number of QoS levels, including rejection (level 0).
    pub fn level_count(&self) -> usize {
        self.boundaries.len()
    }

    /// `(lower, upper]` completion interval for an accepting level `q >= 1`.
    pub fn interval(&self, level: usize) -> Option<(f64, f64)> {
        if level == 0 || level >= self.level_count() {
            return None;
        }
        Some((self.boundaries[level], self.boundaries[level - 1]))
    }
}

/// Undirected, connected communication graph over agents `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<BTreeSet<usize>>,
}

impl CommGraph {
    /// Builds the graph, canonicalizing each edge to `(min, max)` and sorting.
    pub fn new(n: usize, raw_edges: &[(usize, usize)]) -> Result<Self, Vec<ScenarioError>> {
        let mut errors = Vec::new();
        let mut seen = BTreeSet::new();
        let mut edges = Vec::new();
        for &(a, b) in raw_edges {
            if a == b {
                errors.push(ScenarioError::SelfLoop { agent: a });
                continue;
            }
            if a == 0 || b == 0 || a > n || b > n {
                errors.push(ScenarioError::EdgeIndexOutOfRange { edge: (a, b) });
                continue;
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                errors.push(ScenarioError::DuplicateEdge { edge: e });
                continue;
            }
            edges.push(e);
        }
        edges.sort_unstable();
        let mut adjacency = vec![BTreeSet::new(); n + 1];
        for &(a, b) in &edges {
            adjacency[a].insert(b);
            adjacency[b].insert(a);
        }
        let graph = CommGraph { n, edges, adjacency };
        if errors.is_empty() && !graph.is_connected() {
            errors.push(ScenarioError::DisconnectedGraph);
        }
        if errors.is_empty() {
            Ok(graph)
        } else {
            Err(errors)
        }
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    /// Canonical `(i, j)` edge list with `i < j`, sorted ascending.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbor set of agent `i` (1-based).
    pub fn neighbors(&self, i: usize) -> Result<&BTreeSet<usize>, ScenarioError> {
        if i == 0 || i > self.n {
            return Err(ScenarioError::IndexOutOfRange { index: i, n: self.n });
        }
        Ok(&self.adjacency[i])
    }

    fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut visited = vec![false; self.n + 1];
        let mut stack = vec![1];
        visited[1] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.adjacency[v] {
                if !visited[w] {
                    visited[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.n
    }
}

/// Instantaneous kinematic state of all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub pos: Vec<Vector>,
    pub vel: Vec<Vector>,
}

impl AgentState {
    pub fn new(pos: Vec<Vector>, vel: Vec<Vector>) -> Self {
        assert_eq!(pos.len(), vel.len(), "position/velocity lists differ in length");
        AgentState { pos, vel }
    }

    pub fn agent_count(&self) -> usize {
        self.pos.len()
    }

    pub fn is_finite(&self) -> bool {
        self.pos
            .iter()
            .chain(self.vel.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Validated problem instance. Construct through [`validate_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dim: usize,
    pub graph: CommGraph,
    pub init_pos: Vec<Vector>,
    pub init_vel: Vec<Vector>,
    /// Active agents (1-based ids); the complement is passive.
    pub active: BTreeSet<usize>,
    pub tasks: Vec<TaskSpec>,
    pub alpha: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Sampling box for seeded initial positions, `(lo, hi)` per coordinate.
    pub init_box: (Vec<f64>, Vec<f64>),
}

impl Scenario {
    pub fn agent_count(&self) -> usize {
        self.graph.agent_count()
    }

    pub fn task(&self, id: usize) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn initial_state(&self) -> AgentState {
        AgentState::new(self.init_pos.clone(), self.init_vel.clone())
    }

    pub fn is_active(&self, agent: usize) -> bool {
        self.active.contains(&agent)
    }
}

const DEFAULT_INIT_BOX: (f64, f64) = (0.0, 2.0);

/// Checks every scenario invariant and returns the immutable instance, or the
/// full list of violations (not just the first).
pub fn validate_scenario(raw: &RawScenario) -> Result<Scenario, Vec<ScenarioError>> {
    let mut errors = Vec::new();
    let dim = raw.dimension;
    if dim == 0 {
        errors.push(ScenarioError::BadDimension);
    }
    if raw.agents.is_empty() {
        errors.push(ScenarioError::MissingAgents);
    }
    let n = raw.agents.len();

    let mut init_pos = Vec::with_capacity(n);
    let mut init_vel = Vec::with_capacity(n);
    for (idx, agent) in raw.agents.iter().enumerate() {
        let who = idx + 1;
        for (name, coords) in [("position", &agent.position), ("velocity", &agent.velocity)] {
            if dim > 0 && coords.len() != dim {
                errors.push(ScenarioError::DimensionMismatch {
                    what: format!("agent {who} {name}"),
                    expected: dim,
                    got: coords.len(),
                });
            }
            if coords.iter().any(|x| !x.is_finite()) {
                errors.push(ScenarioError::NonFinite {
                    what: format!("agent {who} {name}"),
                });
            }
        }
        init_pos.push(Vector::from_vec(agent.position.clone()));
        init_vel.push(Vector::from_vec(agent.velocity.clone()));
    }

    let raw_edges: Vec<(usize, usize)> = raw.edges.iter().map(|e| (e[0], e[1])).collect();
    let graph = match CommGraph::new(n, &raw_edges) {
        Ok(g) => Some(g),
        Err(mut graph_errors) => {
            errors.append(&mut graph_errors);
            None
        }
    };

    let mut active = BTreeSet::new();
    if raw.active.is_empty() {
        errors.push(ScenarioError::EmptyActiveSet);
    }
    for &a in &raw.active {
        if a == 0 || a > n {
            errors.push(ScenarioError::ActiveIndexOutOfRange { agent: a });
        } else {
            active.insert(a);
        }
    }

    if !(raw.r_min.is_finite() && raw.r_max.is_finite() && 0.0 < raw.r_min && raw.r_min < raw.r_max)
    {
        errors.push(ScenarioError::BadRadiusBounds {
            r_min: raw.r_min,
            r_max: raw.r_max,
        });
    }
    if !(raw.alpha.is_finite() && (0.0..=1.0).contains(&raw.alpha)) {
        errors.push(ScenarioError::BadAlpha { alpha: raw.alpha });
    }

    let mut tasks = Vec::with_capacity(raw.tasks.len());
    for (idx, t) in raw.tasks.iter().enumerate() {
        let id = idx + 1;
        if dim > 0 && t.center.len() != dim {
            errors.push(ScenarioError::DimensionMismatch {
                what: format!("task {id} center"),
                expected: dim,
                got: t.center.len(),
            });
        }
        if t.center.iter().any(|x| !x.is_finite()) || !t.radius.is_finite() {
            errors.push(ScenarioError::NonFinite {
                what: format!("task {id} region"),
            });
        }
        if raw.r_min.is_finite()
            && raw.r_max.is_finite()
            && !(raw.r_min <= t.radius && t.radius <= raw.r_max)
        {
            errors.push(ScenarioError::RadiusOutOfRange {
                task: id,
                radius: t.radius,
            });
        }
        check_boundaries(id, t.deadline, &t.boundaries, &t.rewards, &mut errors);
        tasks.push(TaskSpec {
            id,
            region: Region {
                center: Vector::from_vec(t.center.clone()),
                radius: t.radius,
            },
            deadline: t.deadline,
            boundaries: t.boundaries.clone(),
            rewards: t.rewards.clone(),
        });
    }

    // Assumption: regions pairwise disjoint, and no agent starts inside one.
    for a in 0..tasks.len() {
        for b in (a + 1)..tasks.len() {
            let (ra, rb) = (&tasks[a].region, &tasks[b].region);
            if ra.center.len() == rb.center.len()
                && (&ra.center - &rb.center).norm() <= ra.radius + rb.radius
            {
                errors.push(ScenarioError::DisjointnessViolation {
                    set_a: tasks[a].id,
                    set_b: tasks[b].id,
                });
            }
        }
    }
    for task in &tasks {
        for p in &init_pos {
            if p.len() == task.region.center.len() && task.region.contains(p).unwrap_or(false) {
                errors.push(ScenarioError::DisjointnessViolation {
                    set_a: 0,
                    set_b: task.id,
                });
                break;
            }
        }
    }

    let init_box = match &raw.init_box {
        None => (
            vec![DEFAULT_INIT_BOX.0; dim.max(1)],
            vec![DEFAULT_INIT_BOX.1; dim.max(1)],
        ),
        Some(RawBox { lo, hi }) => {
            if lo.len() != dim
                || hi.len() != dim
                || lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h))
            {
                errors.push(ScenarioError::BadInitBox);
            }
            (lo.clone(), hi.clone())
        }
    };

    if errors.is_empty() {
        Ok(Scenario {
            dim,
            graph: graph.expect("graph built when error list is empty"),
            init_pos,
            init_vel,
            active,
            tasks,
            alpha: raw.alpha,
            r_min: raw.r_min,
            r_max: raw.r_max,
            init_box,
        })
    } else {
        Err(errors)
    }
}

fn check_boundaries(
    id: usize,
    deadline: f64,
    boundaries: &[f64],
    rewards: &[f64],
    errors: &mut Vec<ScenarioError>,
) {
    let mut push = |reason: &str| {
        errors.push(ScenarioError::MalformedBoundaries {
            task: id,
            reason: reason.into(),
        })
    };
    if boundaries.len() < 2 {
        push("needs at least the deadline and the trailing zero");
        return;
    }
    if boundaries.iter().any(|b| !b.is_finite()) {
        push("non-finite boundary");
        return;
    }
    if boundaries[0] != deadline {
        push("first boundary must equal the deadline");
    }
    if *boundaries.last().unwrap() != 0.0 {
        push("last boundary must be zero");
    }
    if !(deadline > 0.0) {
        push("deadline must be positive");
    }
    if boundaries.windows(2).any(|w| !(w[0] > w[1])) {
        push("boundaries must be strictly decreasing");
    }
    if rewards.len() != boundaries.len() {
        push("rewards and boundaries differ in length");
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        push("non-finite reward");
    }
    if let Some(&r0) = rewards.first() {
        if !(r0 < 0.0) {
            errors.push(ScenarioError::BadRejectionPenalty { task: id, reward: r0 });
        }
    }
}

/// Draws initial positions uniformly from the box, re-sampling the whole set
/// until no agent starts inside a task region. Velocities are left to the
/// caller. Deterministic in the seed.
pub fn sample_initial_positions(
    seed: u64,
    init_box: &(Vec<f64>, Vec<f64>),
    agents: usize,
    tasks: &[TaskSpec],
) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = init_box.0.len();
    loop {
        let draw: Vec<Vector> = (0..agents)
            .map(|_| {
                Vector::from_iterator(
                    dim,
                    (0..dim).map(|d| rng.gen_range(init_box.0[d]..init_box.1[d])),
                )
            })
            .collect();
        let clear = draw.iter().all(|p| {
            tasks
                .iter()
                .all(|t| !t.region.contains(p).unwrap_or(true))
        });
        if clear {
            return draw;
        }
    }
}
