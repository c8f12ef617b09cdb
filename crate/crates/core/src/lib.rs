//! Scheduling and simulation of deadline-windowed multi-agent visit tasks.
//!
//! A fleet of double-integrator agents, connected by a fixed communication
//! graph, must visit a sequence of target regions. Each task offers several
//! service levels, one per completion-time window, and an exact solver picks
//! the task order and level assignment maximizing a reward-minus-travel
//! tradeoff subject to a strictly increasing chain of estimated completion
//! times. The chosen schedule is then executed in simulation: every task gets
//! funnel controllers synthesized from the fleet state at its start, shaped
//! so the fleet provably reaches the target inside the assigned window, and
//! the recorded trace can be independently re-checked afterwards (funnel
//! satisfaction, timing, energy monotonicity, gain conditions).
//!
//! Modules, in pipeline order:
//!
//! - [`scenario`]: problem data model, validation, seeded initial sampling.
//! - [`scheduler`]: exact branch-and-bound solver and brute-force oracle.
//! - [`controller`]: funnel synthesis and force evaluation per task.
//! - [`sim`]: fixed-step RK4 mission execution with event bisection.
//! - [`diagnostics`]: certificate evaluation over recorded traces.
//! - [`formats`]: scenario/schedule/trace/report files.

pub mod controller;
pub mod diagnostics;
pub mod formats;
pub mod scenario;
pub mod scheduler;
pub mod sim;

#[cfg(test)]
pub(crate) mod testutil;
