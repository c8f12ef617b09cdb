//! On-disk formats: scenario JSON, schedule documents, trace CSV pairs, and
//! certificate reports.
//!
//! Every artifact embeds the scenario hash and tool version so a pipeline's
//! files can be checked for mutual consistency later. The hash is computed
//! over a canonical re-serialization of the parsed scenario, making it
//! independent of formatting and key order in the source file.
//!
//! Floating-point values are written with the shortest representation that
//! parses back to the identical bits, so traces survive a write/read cycle
//! unchanged and the verifier can insist on bitwise agreement.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::SynthConfig;
use crate::diagnostics::CertificateReport;
use crate::scenario::{validate_scenario, Scenario, ScenarioError, Vector};
use crate::scheduler::{
    check_feasible, compute_epsilon, estimated_completion, objective_value, path_cost,
    path_reward, Schedule, SchedulerConfig,
};
use crate::sim::{
    EdgeSample, ExecutionRecord, MissionStatus, MissionTrace, Sample, SimConfig, TrackSample,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario validation failed: {}", summarize(.0))]
    Invalid(Vec<ScenarioError>),
    #[error("malformed trace: {reason}")]
    MalformedTrace { reason: String },
    #[error("schedule document inconsistent with scenario: {reason}")]
    InconsistentSchedule { reason: String },
}

fn summarize(errors: &[ScenarioError]) -> String {
    errors
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Scenario file schema, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dimension: usize,
    pub agents: Vec<RawAgent>,
    pub edges: Vec<[usize; 2]>,
    pub active: Vec<usize>,
    pub r_min: f64,
    pub r_max: f64,
    pub alpha: f64,
    pub tasks: Vec<RawTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_box: Option<RawBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAgent {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTask {
    pub center: Vec<f64>,
    pub radius: f64,
    pub deadline: f64,
    pub boundaries: Vec<f64>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Content hash of a scenario: SHA-256 of its canonical serialization.
pub fn scenario_hash(raw: &RawScenario) -> String {
    let canonical = serde_json::to_string(raw).expect("scenario serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        write!(out, "{byte:02x}").expect("hex into string");
    }
    out
}

/// Parses, validates, and hashes a scenario file.
pub fn load_scenario(path: &Path) -> Result<(RawScenario, Scenario, String), FormatError> {
    let text = fs::read_to_string(path)?;
    let raw: RawScenario = serde_json::from_str(&text)?;
    let scenario = validate_scenario(&raw).map_err(FormatError::Invalid)?;
    let hash = scenario_hash(&raw);
    Ok((raw, scenario, hash))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub task: usize,
    pub qos: usize,
    /// Estimated completion used by the feasibility chain.
    pub ee: f64,
    /// Assigned service window, absent for rejected tasks.
    pub window: Option<(f64, f64)>,
}

/// Schedule artifact: the solver's answer plus everything needed to re-check
/// it against the scenario it was computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub tool_version: String,
    pub scenario_hash: String,
    pub alpha: f64,
    pub include_initial_leg: bool,
    pub epsilon: f64,
    pub entries: Vec<ScheduleEntry>,
    pub reward: f64,
    pub cost: f64,
    pub objective: f64,
}

impl ScheduleDoc {
    pub fn from_schedule(
        schedule: &Schedule,
        scenario: &Scenario,
        config: &SchedulerConfig,
        hash: &str,
    ) -> Self {
        let epsilon = compute_epsilon(scenario).expect("scenario has tasks");
        let entries = schedule
            .order
            .iter()
            .zip(&schedule.qos)
            .zip(&schedule.estimated_completion)
            .map(|((&task, &qos), &ee)| ScheduleEntry {
                task,
                qos,
                ee,
                window: scenario
                    .task(task)
                    .and_then(|t| t.interval(qos)),
            })
            .collect();
        ScheduleDoc {
            tool_version: TOOL_VERSION.to_string(),
            scenario_hash: hash.to_string(),
            alpha: config.effective_alpha(scenario),
            include_initial_leg: config.include_initial_leg,
            epsilon,
            entries,
            reward: schedule.reward,
            cost: schedule.cost,
            objective: schedule.objective,
        }
    }

    pub fn to_schedule(&self) -> Schedule {
        Schedule {
            order: self.entries.iter().map(|e| e.task).collect(),
            qos: self.entries.iter().map(|e| e.qos).collect(),
            estimated_completion: self.entries.iter().map(|e| e.ee).collect(),
            reward: self.reward,
            cost: self.cost,
            objective: self.objective,
        }
    }

    /// Recomputes every derived quantity from the scenario and demands exact
    /// agreement, then checks the completion-time chain is feasible. Returns
    /// the embedded schedule on success.
    pub fn check_against(&self, scenario: &Scenario) -> Result<Schedule, FormatError> {
        let fail = |reason: String| FormatError::InconsistentSchedule { reason };
        let config = SchedulerConfig {
            alpha: Some(self.alpha),
            include_initial_leg: self.include_initial_leg,
        };
        let eps = compute_epsilon(scenario)
            .map_err(|e| fail(format!("epsilon not computable: {e}")))?;
        if eps.to_bits() != self.epsilon.to_bits() {
            return Err(fail(format!("epsilon {} but scenario gives {eps}", self.epsilon)));
        }
        let schedule = self.to_schedule();
        if schedule.order.len() != scenario.tasks.len() {
            return Err(fail(format!(
                "{} entries for {} tasks",
                schedule.order.len(),
                scenario.tasks.len()
            )));
        }
        for entry in &self.entries {
            let task = scenario
                .task(entry.task)
                .ok_or_else(|| fail(format!("unknown task {}", entry.task)))?;
            if entry.qos >= task.level_count() {
                return Err(fail(format!(
                    "task {} level {} exceeds {}",
                    entry.task,
                    entry.qos,
                    task.level_count() - 1
                )));
            }
            let ee = estimated_completion(scenario, entry.task, entry.qos, eps);
            if ee.to_bits() != entry.ee.to_bits() {
                return Err(fail(format!(
                    "task {} estimated completion {} but scenario gives {ee}",
                    entry.task, entry.ee
                )));
            }
            if entry.window != task.interval(entry.qos) {
                return Err(fail(format!("task {} window mismatch", entry.task)));
            }
        }
        if !check_feasible(scenario, &schedule.order, &schedule.qos, eps) {
            return Err(fail("estimated completions do not strictly increase".into()));
        }
        let reward = path_reward(scenario, &schedule.order, &schedule.qos);
        let cost = path_cost(scenario, &schedule.order, &schedule.qos, &config);
        let objective = objective_value(scenario, &config, reward, cost);
        if reward.to_bits() != self.reward.to_bits() {
            return Err(fail(format!("reward {} but scenario gives {reward}", self.reward)));
        }
        if cost.to_bits() != self.cost.to_bits() {
            return Err(fail(format!("cost {} but scenario gives {cost}", self.cost)));
        }
        if objective.to_bits() != self.objective.to_bits() {
            return Err(fail(format!(
                "objective {} but scenario gives {objective}",
                self.objective
            )));
        }
        Ok(schedule)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Header material carried by both trace files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub tool_version: String,
    pub scenario_hash: String,
    pub agents: usize,
    pub dimension: usize,
    pub sim: SimConfig,
    pub synth: SynthConfig,
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn meta_line<T: Serialize>(out: &mut String, key: &str, value: &T) {
    let json = serde_json::to_string(value).expect("metadata serializes");
    writeln!(out, "# {key}: {json}").expect("write to string");
}

/// Writes a mission trace as a pair of CSV files: per-agent rows alongside
/// per-edge rows, edges labeled by the scenario's canonical edge list. A
/// metadata block of `# key: json` lines precedes each header.
pub fn write_trace_for(
    main: &Path,
    edges_path: &Path,
    trace: &MissionTrace,
    scenario: &Scenario,
    hash: &str,
    sim: &SimConfig,
    synth: &SynthConfig,
) -> Result<(), FormatError> {
    let meta = TraceMeta {
        tool_version: TOOL_VERSION.to_string(),
        scenario_hash: hash.to_string(),
        agents: scenario.agent_count(),
        dimension: scenario.dim,
        sim: *sim,
        synth: *synth,
    };
    let labels: Vec<String> = scenario
        .graph
        .edges()
        .iter()
        .map(|(i, j)| format!("{i}-{j}"))
        .collect();
    write_trace_with_labels(main, edges_path, trace, &meta, &labels)
}

fn write_trace_with_labels(
    main: &Path,
    edges_path: &Path,
    trace: &MissionTrace,
    meta: &TraceMeta,
    labels: &[String],
) -> Result<(), FormatError> {
    // Main file.
    let mut head = String::new();
    meta_line(&mut head, "tool_version", &meta.tool_version);
    meta_line(&mut head, "scenario_hash", &meta.scenario_hash);
    meta_line(&mut head, "agents", &meta.agents);
    meta_line(&mut head, "dimension", &meta.dimension);
    meta_line(&mut head, "sim_config", &meta.sim);
    meta_line(&mut head, "synth_config", &meta.synth);
    meta_line(&mut head, "status", &trace.status);
    meta_line(&mut head, "achieved", &trace.achieved);
    meta_line(&mut head, "executions", &trace.executions);
    meta_line(&mut head, "idle_range", &trace.idle_range);
    meta_line(&mut head, "samples", &trace.samples.len());
    let dim = meta.dimension;
    let mut body = String::with_capacity(trace.samples.len() * meta.agents * 64);
    body.push_str("t,agent");
    for k in 1..=dim {
        write!(body, ",x{k}").unwrap();
    }
    for k in 1..=dim {
        write!(body, ",v{k}").unwrap();
    }
    for k in 1..=dim {
        write!(body, ",u{k}").unwrap();
    }
    body.push_str(",xi_track,lower_bound,upper_bound\n");
    for sample in &trace.samples {
        for agent in 1..=meta.agents {
            let idx = agent - 1;
            write!(body, "{},{agent}", fmt_f64(sample.t)).unwrap();
            for k in 0..dim {
                write!(body, ",{}", fmt_f64(sample.pos[idx][k])).unwrap();
            }
            for k in 0..dim {
                write!(body, ",{}", fmt_f64(sample.vel[idx][k])).unwrap();
            }
            for k in 0..dim {
                write!(body, ",{}", fmt_f64(sample.input[idx][k])).unwrap();
            }
            match sample.tracking.get(&agent) {
                Some(tr) => writeln!(
                    body,
                    ",{},{},{}",
                    fmt_f64(tr.xi),
                    fmt_f64(tr.lower),
                    fmt_f64(tr.upper)
                )
                .unwrap(),
                None => body.push_str(",,,\n"),
            }
        }
    }
    let mut f = fs::File::create(main)?;
    f.write_all(head.as_bytes())?;
    f.write_all(body.as_bytes())?;

    // Edge file.
    let mut ehead = String::new();
    meta_line(&mut ehead, "tool_version", &meta.tool_version);
    meta_line(&mut ehead, "scenario_hash", &meta.scenario_hash);
    meta_line(&mut ehead, "edges", &labels);
    let mut ebody = String::from("t,edge,dist,xi_edge,gamma_bound\n");
    for sample in &trace.samples {
        for (k, e) in sample.edges.iter().enumerate() {
            writeln!(
                ebody,
                "{},{},{},{},{}",
                fmt_f64(sample.t),
                labels[k],
                fmt_opt(Some(e.dist)),
                fmt_opt(e.xi),
                fmt_opt(e.gamma)
            )
            .unwrap();
        }
    }
    let mut f = fs::File::create(edges_path)?;
    f.write_all(ehead.as_bytes())?;
    f.write_all(ebody.as_bytes())?;
    Ok(())
}

fn parse_meta(text: &str) -> Result<BTreeMap<String, String>, FormatError> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("# ") else { break };
        let Some((key, value)) = rest.split_once(": ") else {
            return Err(FormatError::MalformedTrace {
                reason: format!("metadata line without separator: {line}"),
            });
        };
        map.insert(key.to_string(), value.to_string());
    }
    Ok(map)
}

fn meta_get<'a>(
    map: &'a BTreeMap<String, String>,
    key: &str,
) -> Result<&'a String, FormatError> {
    map.get(key).ok_or_else(|| FormatError::MalformedTrace {
        reason: format!("missing metadata key {key}"),
    })
}

fn parse_field(s: &str, what: &str) -> Result<f64, FormatError> {
    s.parse::<f64>().map_err(|_| FormatError::MalformedTrace {
        reason: format!("unparseable {what}: {s}"),
    })
}

fn parse_opt_field(s: &str, what: &str) -> Result<Option<f64>, FormatError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, what).map(Some)
    }
}

/// Reads back a trace pair written by [`write_trace_for`].
pub fn read_trace(main: &Path, edges_path: &Path) -> Result<(MissionTrace, TraceMeta), FormatError> {
    let text = fs::read_to_string(main)?;
    let map = parse_meta(&text)?;
    let meta = TraceMeta {
        tool_version: serde_json::from_str(meta_get(&map, "tool_version")?)?,
        scenario_hash: serde_json::from_str(meta_get(&map, "scenario_hash")?)?,
        agents: serde_json::from_str(meta_get(&map, "agents")?)?,
        dimension: serde_json::from_str(meta_get(&map, "dimension")?)?,
        sim: serde_json::from_str(meta_get(&map, "sim_config")?)?,
        synth: serde_json::from_str(meta_get(&map, "synth_config")?)?,
    };
    let status: MissionStatus = serde_json::from_str(meta_get(&map, "status")?)?;
    let achieved: BTreeMap<usize, usize> = serde_json::from_str(meta_get(&map, "achieved")?)?;
    let executions: Vec<ExecutionRecord> =
        serde_json::from_str(meta_get(&map, "executions")?)?;
    let idle_range: Option<(usize, usize)> =
        serde_json::from_str(meta_get(&map, "idle_range")?)?;
    let expected_samples: usize = serde_json::from_str(meta_get(&map, "samples")?)?;

    let n = meta.agents;
    let dim = meta.dimension;
    let mut samples: Vec<Sample> = Vec::with_capacity(expected_samples);
    let mut rows = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .peekable();
    while rows.peek().is_some() {
        let mut sample = Sample {
            t: 0.0,
            pos: Vec::with_capacity(n),
            vel: Vec::with_capacity(n),
            input: Vec::with_capacity(n),
            tracking: BTreeMap::new(),
            edges: Vec::new(),
        };
        for agent in 1..=n {
            let line = rows.next().ok_or_else(|| FormatError::MalformedTrace {
                reason: format!("file ends inside sample {}", samples.len()),
            })?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 + 3 * dim + 3 {
                return Err(FormatError::MalformedTrace {
                    reason: format!("row has {} fields, expected {}", fields.len(), 2 + 3 * dim + 3),
                });
            }
            let t = parse_field(fields[0], "time")?;
            if agent == 1 {
                sample.t = t;
            } else if t.to_bits() != sample.t.to_bits() {
                return Err(FormatError::MalformedTrace {
                    reason: format!("agent rows of one sample disagree on t at {t}"),
                });
            }
            let got_agent: usize =
                fields[1].parse().map_err(|_| FormatError::MalformedTrace {
                    reason: format!("unparseable agent index {}", fields[1]),
                })?;
            if got_agent != agent {
                return Err(FormatError::MalformedTrace {
                    reason: format!("expected agent {agent}, found {got_agent}"),
                });
            }
            let mut x = Vec::with_capacity(dim);
            let mut v = Vec::with_capacity(dim);
            let mut u = Vec::with_capacity(dim);
            for k in 0..dim {
                x.push(parse_field(fields[2 + k], "position")?);
            }
            for k in 0..dim {
                v.push(parse_field(fields[2 + dim + k], "velocity")?);
            }
            for k in 0..dim {
                u.push(parse_field(fields[2 + 2 * dim + k], "input")?);
            }
            sample.pos.push(Vector::from_vec(x));
            sample.vel.push(Vector::from_vec(v));
            sample.input.push(Vector::from_vec(u));
            let xi = parse_opt_field(fields[2 + 3 * dim], "tracking error")?;
            let lo = parse_opt_field(fields[2 + 3 * dim + 1], "lower bound")?;
            let hi = parse_opt_field(fields[2 + 3 * dim + 2], "upper bound")?;
            match (xi, lo, hi) {
                (Some(xi), Some(lower), Some(upper)) => {
                    sample.tracking.insert(agent, TrackSample { xi, lower, upper });
                }
                (None, None, None) => {}
                _ => {
                    return Err(FormatError::MalformedTrace {
                        reason: "partial tracking triple".into(),
                    });
                }
            }
        }
        samples.push(sample);
    }
    if samples.len() != expected_samples {
        return Err(FormatError::MalformedTrace {
            reason: format!(
                "metadata promises {expected_samples} samples, file holds {}",
                samples.len()
            ),
        });
    }

    let etext = fs::read_to_string(edges_path)?;
    let emap = parse_meta(&etext)?;
    let labels: Vec<String> = serde_json::from_str(meta_get(&emap, "edges")?)?;
    let edge_count = labels.len();
    if edge_count > 0 {
        let mut erows = etext.lines().filter(|l| !l.starts_with('#')).skip(1);
        for (s_idx, sample) in samples.iter_mut().enumerate() {
            for label in &labels {
                let line = erows.next().ok_or_else(|| FormatError::MalformedTrace {
                    reason: format!("edge file ends inside sample {s_idx}"),
                })?;
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != 5 {
                    return Err(FormatError::MalformedTrace {
                        reason: format!("edge row has {} fields, expected 5", fields.len()),
                    });
                }
                let t = parse_field(fields[0], "time")?;
                if t.to_bits() != sample.t.to_bits() {
                    return Err(FormatError::MalformedTrace {
                        reason: format!("edge rows out of step with samples at t = {t}"),
                    });
                }
                if fields[1] != label {
                    return Err(FormatError::MalformedTrace {
                        reason: format!("expected edge {label}, found {}", fields[1]),
                    });
                }
                sample.edges.push(EdgeSample {
                    dist: parse_field(fields[2], "distance")?,
                    xi: parse_opt_field(fields[3], "edge error")?,
                    gamma: parse_opt_field(fields[4], "edge bound")?,
                });
            }
        }
        if erows.next().is_some() {
            return Err(FormatError::MalformedTrace {
                reason: "edge file has surplus rows".into(),
            });
        }
    }

    Ok((
        MissionTrace {
            samples,
            executions,
            idle_range,
            achieved,
            status,
        },
        meta,
    ))
}

/// Certificate report artifact with provenance fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub tool_version: String,
    pub scenario_hash: String,
    pub report: CertificateReport,
}

impl ReportDoc {
    pub fn new(hash: &str, report: CertificateReport) -> Self {
        ReportDoc {
            tool_version: TOOL_VERSION.to_string(),
            scenario_hash: hash.to_string(),
            report,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
