//! Baseline policies and the episode runner.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::case::{ElementRef, GridCase};
use crate::chronics::Chronics;
use crate::config::EnvConfig;
use crate::env::{Environment, Observation};
use crate::error::EnvError;
use crate::log::{EpisodeLog, LogHeader, StepRecord, LOG_FORMAT_VERSION};

pub trait AgentPolicy: Send {
    fn name(&self) -> &str;

    /// Chooses an action; `env` is available for what-if simulation.
    fn act(&mut self, env: &Environment, obs: &Observation) -> Action;
}

#[derive(Debug, Default, Clone)]
pub struct DoNothing;

impl AgentPolicy for DoNothing {
    fn name(&self) -> &str {
        "do_nothing"
    }

    fn act(&mut self, _env: &Environment, _obs: &Observation) -> Action {
        Action::do_nothing()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    /// Act only when the largest loading reaches this value.
    pub activation_rho: f64,
    /// Substations with more connectable elements only try single-element moves.
    pub max_split_elements: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            activation_rho: 0.9,
            max_split_elements: 6,
        }
    }
}

/// One-step lookahead over line toggles and single-substation busbar layouts.
#[derive(Debug, Default, Clone)]
pub struct GreedyTopology {
    pub config: GreedyConfig,
}

impl GreedyTopology {
    pub fn new(config: GreedyConfig) -> Self {
        Self { config }
    }
}

/// Candidate actions in a fixed order: do-nothing, line toggles in line
/// order, then busbar layouts per substation.
pub fn topology_candidates(case: &GridCase, obs: &Observation, max_split_elements: usize) -> Vec<Action> {
    let mut out = vec![Action::do_nothing()];
    for (l, line) in case.lines().iter().enumerate() {
        out.push(Action::line_status(line.id.clone(), !obs.topology.line_status[l]));
    }
    for s in 0..case.n_substations() {
        out.extend(substation_layouts(case, obs, s, max_split_elements));
    }
    out
}

/// Every two-busbar layout of one substation that differs from the current one,
/// with the first element pinned to busbar 1 so mirrored layouts appear once.
/// Above `max_split_elements`, only single-element moves are produced.
pub fn substation_layouts(
    case: &GridCase,
    obs: &Observation,
    sub: usize,
    max_split_elements: usize,
) -> Vec<Action> {
    let elements: &[ElementRef] = case.elements_at(sub);
    let n = elements.len();
    if n < 2 {
        return Vec::new();
    }
    let current: Vec<u8> = elements.iter().map(|&e| obs.topology.busbar(e)).collect();
    let to_action = |layout: &[u8]| -> Option<Action> {
        // Same partition as the current layout, possibly with swapped labels.
        let same = layout.iter().zip(&current).all(|(a, b)| a == b);
        let mirrored = layout.iter().zip(&current).all(|(a, b)| a != b);
        if same || mirrored {
            return None;
        }
        let changes: BTreeMap<String, u8> = elements
            .iter()
            .zip(layout)
            .zip(&current)
            .filter(|((_, new), old)| new != old)
            .map(|((&e, &new), _)| (case.element_key(e), new))
            .collect();
        Some(Action {
            set_busbars: changes,
            ..Action::default()
        })
    };

    if n > max_split_elements {
        return (0..n)
            .filter_map(|i| {
                let mut layout = current.clone();
                layout[i] = 3 - layout[i];
                to_action(&layout)
            })
            .collect();
    }
    (0..1u32 << (n - 1))
        .filter_map(|mask| {
            let layout: Vec<u8> = (0..n)
                .map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { 2 } else { 1 })
                .collect();
            to_action(&layout)
        })
        .collect()
}

impl AgentPolicy for GreedyTopology {
    fn name(&self) -> &str {
        "greedy"
    }

    fn act(&mut self, env: &Environment, obs: &Observation) -> Action {
        if obs.max_rho() < self.config.activation_rho {
            return Action::do_nothing();
        }
        let case = env.case();
        let mut best: Option<(f64, usize, Action)> = None;
        for action in topology_candidates(case, obs, self.config.max_split_elements) {
            if env.check_legal(&action).is_err() {
                continue;
            }
            let Ok(result) = env.simulate(&action) else {
                continue;
            };
            if result.termination.is_failure() {
                continue;
            }
            let touched = action.elements_touched();
            // Strictly better reward wins; on ties the earlier (fewer-touched) candidate stays.
            let better = match &best {
                None => true,
                Some((r, t, _)) => result.reward > *r || (result.reward == *r && touched < *t),
            };
            if better {
                best = Some((result.reward, touched, action));
            }
        }
        best.map(|(_, _, a)| a).unwrap_or_default()
    }
}

/// Replays a fixed action sequence, then does nothing.
#[derive(Debug, Clone)]
pub struct Scripted {
    name: String,
    actions: std::vec::IntoIter<Action>,
}

impl Scripted {
    pub fn new(name: impl Into<String>, actions: Vec<Action>) -> Self {
        Self {
            name: name.into(),
            actions: actions.into_iter(),
        }
    }
}

impl AgentPolicy for Scripted {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, _env: &Environment, _obs: &Observation) -> Action {
        self.actions.next().unwrap_or_default()
    }
}

pub const AGENT_NAMES: [&str; 2] = ["do_nothing", "greedy"];

pub fn agent_by_name(name: &str) -> Option<Box<dyn AgentPolicy>> {
    match name {
        "do_nothing" => Some(Box::new(DoNothing)),
        "greedy" => Some(Box::new(GreedyTopology::default())),
        _ => None,
    }
}

/// Where an episode's inputs came from, for the log header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeSource {
    pub case_path: String,
    pub chronics_path: String,
}

pub fn log_header(env: &Environment, agent: &str, source: &EpisodeSource) -> LogHeader {
    LogHeader {
        format_version: LOG_FORMAT_VERSION,
        case_id: env.case().name().to_string(),
        case_path: source.case_path.clone(),
        chronics_id: env.chronics().name.clone(),
        chronics_path: source.chronics_path.clone(),
        seed: env.seed(),
        agent: agent.to_string(),
        config_hash: env.config().hash(),
        config: env.config().clone(),
    }
}

/// Resets and steps until done, recording every step.
pub fn run_episode(
    agent: &mut dyn AgentPolicy,
    case: Arc<GridCase>,
    chronics: &Chronics,
    seed: u64,
    config: &EnvConfig,
    source: &EpisodeSource,
) -> Result<EpisodeLog, EnvError> {
    let mut env = Environment::new(case, chronics, config.clone(), seed)?;
    let header = log_header(&env, agent.name(), source);
    let mut obs = env.reset()?;
    let mut steps = Vec::new();
    while !env.is_done() {
        let action = agent.act(&env, &obs);
        let result = env.step(&action)?;
        steps.push(StepRecord::new(&action, &result));
        obs = result.observation;
    }
    Ok(EpisodeLog::finish(header, steps))
}

pub struct BatchJob {
    pub agent: String,
    pub case: Arc<GridCase>,
    pub chronics: Arc<Chronics>,
    pub seed: u64,
    pub source: EpisodeSource,
}

/// Runs independent episodes on separate threads, one environment each.
pub fn run_batch(jobs: Vec<BatchJob>, config: &EnvConfig) -> Vec<Result<EpisodeLog, String>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|job| {
                scope.spawn(move || {
                    let mut agent = agent_by_name(&job.agent)
                        .ok_or_else(|| format!("unknown agent `{}`", job.agent))?;
                    run_episode(agent.as_mut(), job.case, &job.chronics, job.seed, config, &job.source)
                        .map_err(|e| e.to_string())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("episode panicked".into())))
            .collect()
    })
}

/// CSV table of scores per (agent, episode) plus a mean row.
pub fn summary_csv(logs: &[(String, EpisodeLog)]) -> String {
    let mut out = String::from("log,agent,case,chronics,steps,termination,score\n");
    for (name, log) in logs {
        let term = serde_json::to_value(log.termination()).expect("termination serializes");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            name,
            log.header.agent,
            log.header.case_id,
            log.header.chronics_id,
            log.summary.steps,
            term.as_str().unwrap_or_default(),
            log.score()
        ));
    }
    let n = logs.len();
    let total_steps: usize = logs.iter().map(|(_, l)| l.summary.steps).sum();
    let mean = if n == 0 {
        0.0
    } else {
        logs.iter().map(|(_, l)| l.score()).sum::<f64>() / n as f64
    };
    out.push_str(&format!("aggregate,,,,{total_steps},,{mean}\n"));
    out
}
