//! Grid operation environment built on a DC power-flow core.
//!
//! The crate covers the static case model and its switchable topology, the
//! DC solver, chronics ingestion, the episodic environment with its cascade
//! and overload rules, episode logs and scoring, and baseline agents.

// Range checks are written as `!(x >= lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod agents;
pub mod buses;
pub mod case;
pub mod chronics;
pub mod config;
pub mod env;
pub mod error;
pub mod log;
pub mod powerflow;
pub mod sparse;
pub mod topology;

pub use action::Action;
pub use agents::{run_episode, AgentPolicy, DoNothing, EpisodeSource, GreedyTopology};
pub use buses::{reduce_to_buses, BusModel};
pub use case::{validate_case, ElementRef, GridCase};
pub use chronics::{load_chronics, synthesize_chronics, Chronics};
pub use config::{EnvConfig, RewardConfig};
pub use env::{check_legal, margin_reward, Environment, Observation, StepResult, Termination};
pub use log::{episode_score, EpisodeLog};
pub use powerflow::{solve_dc, DcSolver, FlowSolution, InjectionSet};
pub use topology::{apply_topology_delta, default_topology, Topology, TopologyDelta};
