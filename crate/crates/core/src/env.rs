//! Episodic grid environment.
//!
//! A step runs a fixed pipeline: legality check (illegal actions become
//! do-nothing), topology and redispatch update, next-step injections, DC
//! solve, hard-overload cascade, overload timers, reward, termination and
//! cooldown bookkeeping. [`Environment::simulate`] runs the same pipeline on
//! a copy of the state.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::buses::reduce_to_buses;
use crate::case::{validate_case, GridCase};
use crate::chronics::Chronics;
use crate::config::EnvConfig;
use crate::error::{EnvError, GridError};
use crate::powerflow::{DcSolver, FlowSolution, InjectionSet};
use crate::topology::{apply_topology_delta, default_topology, Topology};

const MW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    None,
    Blackout,
    IslandedLoad,
    ChronicsExhausted,
}

impl Termination {
    pub fn is_failure(self) -> bool {
        matches!(self, Termination::Blackout | Termination::IslandedLoad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripCause {
    HardOverload,
    OverloadTimer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeEvent {
    pub wave: u32,
    pub line: String,
    pub rho: f64,
    pub cause: TripCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestep: usize,
    pub timestamp: String,
    pub injections: InjectionSet,
    pub flows: Vec<Option<f64>>,
    pub rho: Vec<Option<f64>>,
    pub topology: Topology,
    pub overload_timer: Vec<u32>,
    pub line_cooldown: Vec<u32>,
    pub substation_cooldown: Vec<u32>,
    /// Accumulated redispatch offset per generator, MW.
    pub redispatch: Vec<f64>,
    /// Next-step chronics values, absent on the last step.
    pub forecast: Option<InjectionSet>,
}

impl Observation {
    pub fn max_rho(&self) -> f64 {
        self.rho.iter().flatten().fold(0.0, |m, r| m.max(*r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub illegal_reason: Option<String>,
    pub cascade: Vec<CascadeEvent>,
    /// MW by which a balancing generator exceeds its limits, if any.
    pub slack_overflow_mw: Option<f64>,
    pub served_load_mw: f64,
    pub demanded_load_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub termination: Termination,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IllegalAction(pub String);

impl std::fmt::Display for IllegalAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// `Σ max(0, 1 − ρ²) / L` over all `L` lines; out-of-service lines add nothing.
pub fn margin_reward(rho: &[Option<f64>]) -> f64 {
    if rho.is_empty() {
        return 1.0;
    }
    let sum: f64 = rho.iter().flatten().map(|r| (1.0 - r * r).max(0.0)).sum();
    sum / rho.len() as f64
}

/// Checks an action against the legality rules for the given observation.
pub fn check_legal(
    case: &GridCase,
    obs: &Observation,
    action: &Action,
) -> Result<(), IllegalAction> {
    let resolved = action.resolve(case).map_err(IllegalAction)?;

    let mut sub: Option<usize> = None;
    for &(el, busbar) in &resolved.delta.busbars {
        if busbar != 1 && busbar != 2 {
            return Err(IllegalAction(format!(
                "invalid busbar {busbar} for `{}`",
                case.element_key(el)
            )));
        }
        let s = case.element_sub(el);
        match sub {
            Some(prev) if prev != s => {
                return Err(IllegalAction(format!(
                    "multiple substations: {} and {}",
                    case.substations()[prev].id,
                    case.substations()[s].id
                )))
            }
            _ => sub = Some(s),
        }
    }
    if let Some(s) = sub {
        let cd = obs.substation_cooldown[s];
        if cd > 0 {
            return Err(IllegalAction(format!(
                "cooldown: substation `{}` has {cd} step(s) remaining",
                case.substations()[s].id
            )));
        }
    }
    for &(l, _) in &resolved.delta.line_status {
        let cd = obs.line_cooldown[l];
        if cd > 0 {
            return Err(IllegalAction(format!(
                "cooldown: line `{}` has {cd} step(s) remaining",
                case.lines()[l].id
            )));
        }
    }

    for &(g, delta) in &resolved.redispatch {
        let gen = &case.generators()[g];
        if Some(g) == case.slack_gen() {
            return Err(IllegalAction(format!("redispatch targets slack generator `{}`", gen.id)));
        }
        if !delta.is_finite() || delta.abs() > gen.ramp + MW_TOL {
            return Err(IllegalAction(format!(
                "ramp: redispatch {delta} MW on `{}` exceeds ramp {}",
                gen.id, gen.ramp
            )));
        }
        let schedule = obs
            .forecast
            .as_ref()
            .map_or(obs.injections.gen_p[g], |f| f.gen_p[g]);
        let target = schedule + obs.redispatch[g] + delta;
        if target < gen.p_min - MW_TOL || target > gen.p_max + MW_TOL {
            return Err(IllegalAction(format!(
                "capacity: `{}` would be set to {target} MW outside [{}, {}]",
                gen.id, gen.p_min, gen.p_max
            )));
        }
    }
    Ok(())
}

/// Bounded cache of factored solvers keyed by topology.
#[derive(Debug, Default)]
struct SolverCache {
    entries: Mutex<Vec<(Topology, Arc<DcSolver>)>>,
}

const SOLVER_CACHE_CAPACITY: usize = 256;

impl SolverCache {
    fn get(&self, case: &GridCase, topo: &Topology) -> Result<Arc<DcSolver>, EnvError> {
        {
            let entries = self.entries.lock().expect("solver cache poisoned");
            if let Some((_, s)) = entries.iter().find(|(t, _)| t == topo) {
                return Ok(Arc::clone(s));
            }
        }
        let model = reduce_to_buses(case, topo)?;
        let solver = Arc::new(DcSolver::new(case, &model)?);
        let mut entries = self.entries.lock().expect("solver cache poisoned");
        if entries.len() >= SOLVER_CACHE_CAPACITY {
            entries.remove(0);
        }
        entries.push((topo.clone(), Arc::clone(&solver)));
        Ok(solver)
    }
}

pub struct CascadeOutcome {
    pub topology: Topology,
    pub solver: Arc<DcSolver>,
    pub solution: FlowSolution,
    /// Lines (index, rho at trip) disconnected in each wave.
    pub waves: Vec<Vec<(usize, f64)>>,
}

fn run_cascade(
    mut topology: Topology,
    mut solver: Arc<DcSolver>,
    mut solution: FlowSolution,
    inj: &InjectionSet,
    hard_rho: f64,
    mut solver_for: impl FnMut(&Topology) -> Result<Arc<DcSolver>, EnvError>,
) -> Result<CascadeOutcome, EnvError> {
    let mut waves = Vec::new();
    loop {
        let tripped: Vec<(usize, f64)> = solution
            .rho
            .iter()
            .enumerate()
            .filter_map(|(l, r)| r.filter(|&r| r >= hard_rho).map(|r| (l, r)))
            .collect();
        if tripped.is_empty() {
            break;
        }
        for &(l, _) in &tripped {
            topology.line_status[l] = false;
        }
        waves.push(tripped);
        solver = solver_for(&topology)?;
        solution = solver.solve(inj)?;
    }
    Ok(CascadeOutcome {
        topology,
        solver,
        solution,
        waves,
    })
}

/// Trips every line at or above `hard_rho` simultaneously, re-solves, and
/// repeats until no line is above the threshold.
pub fn cascade(
    case: &GridCase,
    topology: Topology,
    inj: &InjectionSet,
    hard_rho: f64,
) -> Result<CascadeOutcome, EnvError> {
    let fresh = |t: &Topology| -> Result<Arc<DcSolver>, EnvError> {
        let model = reduce_to_buses(case, t)?;
        Ok(Arc::new(DcSolver::new(case, &model)?))
    };
    let solver = fresh(&topology)?;
    let solution = solver.solve(inj)?;
    run_cascade(topology, solver, solution, inj, hard_rho, fresh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyReport {
    pub line: String,
    pub max_rho: f64,
    pub worst_line: Option<String>,
    pub unserved_island: bool,
    pub islanded_load: bool,
}

#[derive(Debug, Clone)]
struct EnvState {
    t: usize,
    topology: Topology,
    redispatch: Vec<f64>,
    overload_timer: Vec<u32>,
    line_cooldown: Vec<u32>,
    substation_cooldown: Vec<u32>,
    injections: InjectionSet,
    solution: FlowSolution,
    done: bool,
}

pub struct Environment {
    case: Arc<GridCase>,
    chronics: Arc<Chronics>,
    config: EnvConfig,
    seed: u64,
    state: EnvState,
    cache: SolverCache,
}

impl Environment {
    /// Builds an environment and resets it to step 0.
    pub fn new(
        case: Arc<GridCase>,
        chronics: &Chronics,
        config: EnvConfig,
        seed: u64,
    ) -> Result<Self, EnvError> {
        let violations = validate_case(&case);
        if !violations.is_empty() {
            return Err(GridError::InvalidCase(violations).into());
        }
        let bound = Arc::new(chronics.bind(&case)?);
        let cache = SolverCache::default();
        let state = Self::initial_state(&case, &bound, &cache)?;
        Ok(Self {
            case,
            chronics: bound,
            config,
            seed,
            state,
            cache,
        })
    }

    fn initial_state(
        case: &GridCase,
        chronics: &Chronics,
        cache: &SolverCache,
    ) -> Result<EnvState, EnvError> {
        let topology = default_topology(case);
        let redispatch = vec![0.0; case.n_generators()];
        let injections = injections_at(case, chronics, 0, &redispatch);
        let solver = cache.get(case, &topology)?;
        let solution = solver.solve(&injections)?;
        let injections = InjectionSet {
            gen_p: solution.gen_p.clone(),
            ..injections
        };
        Ok(EnvState {
            t: 0,
            topology,
            redispatch,
            overload_timer: vec![0; case.n_lines()],
            line_cooldown: vec![0; case.n_lines()],
            substation_cooldown: vec![0; case.n_substations()],
            injections,
            solution,
            done: chronics.n_steps() == 1,
        })
    }

    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        self.state = Self::initial_state(&self.case, &self.chronics, &self.cache)?;
        Ok(self.observation())
    }

    pub fn case(&self) -> &Arc<GridCase> {
        &self.case
    }

    pub fn chronics(&self) -> &Chronics {
        &self.chronics
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn timestep(&self) -> usize {
        self.state.t
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    pub fn solution(&self) -> &FlowSolution {
        &self.state.solution
    }

    pub fn solver(&self) -> Result<Arc<DcSolver>, EnvError> {
        self.cache.get(&self.case, &self.state.topology)
    }

    pub fn observation(&self) -> Observation {
        self.observe(&self.state)
    }

    fn observe(&self, st: &EnvState) -> Observation {
        let step_minutes = self
            .config
            .step_minutes
            .unwrap_or(self.chronics.meta.step_minutes);
        let timestamp = self.chronics.meta.start
            + chrono::Duration::minutes(i64::from(step_minutes) * st.t as i64);
        let forecast = (st.t + 1 < self.chronics.n_steps()).then(|| InjectionSet {
            gen_p: self.chronics.gen_p[st.t + 1].clone(),
            load_p: self.chronics.load_p[st.t + 1].clone(),
        });
        Observation {
            timestep: st.t,
            timestamp: timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
            injections: st.injections.clone(),
            flows: st.solution.line_flow.clone(),
            rho: st.solution.rho.clone(),
            topology: st.topology.clone(),
            overload_timer: st.overload_timer.clone(),
            line_cooldown: st.line_cooldown.clone(),
            substation_cooldown: st.substation_cooldown.clone(),
            redispatch: st.redispatch.clone(),
            forecast,
        }
    }

    pub fn check_legal(&self, action: &Action) -> Result<(), IllegalAction> {
        check_legal(&self.case, &self.observation(), action)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let (next, result) = self.transition(&self.state, action)?;
        self.state = next;
        Ok(result)
    }

    /// Runs the step pipeline on the forecast without changing the environment.
    pub fn simulate(&self, action: &Action) -> Result<StepResult, EnvError> {
        self.transition(&self.state, action).map(|(_, r)| r)
    }

    fn transition(&self, st: &EnvState, action: &Action) -> Result<(EnvState, StepResult), EnvError> {
        if st.done {
            return Err(EnvError::EpisodeFinished);
        }
        let case = &*self.case;
        let cfg = &self.config;
        let n_lines = case.n_lines();

        let (applied, illegal_reason) = match check_legal(case, &self.observe(st), action) {
            Ok(()) => (action.clone(), None),
            Err(IllegalAction(reason)) => (Action::do_nothing(), Some(reason)),
        };
        let resolved = applied
            .resolve(case)
            .expect("legal actions resolve");

        let mut topology = apply_topology_delta(case, &st.topology, &resolved.delta)?;
        let mut line_cooldown = st.line_cooldown.clone();
        let mut substation_cooldown = st.substation_cooldown.clone();
        let mut fresh_line_cd = vec![false; n_lines];
        let mut fresh_sub_cd = vec![false; case.n_substations()];
        for l in 0..n_lines {
            if topology.line_status[l] != st.topology.line_status[l] {
                line_cooldown[l] = cfg.line_cooldown;
                fresh_line_cd[l] = true;
            }
        }
        for s in topology.changed_substations(&st.topology, case) {
            substation_cooldown[s] = cfg.substation_cooldown;
            fresh_sub_cd[s] = true;
        }
        let mut redispatch = st.redispatch.clone();
        for &(g, delta) in &resolved.redispatch {
            redispatch[g] += delta;
        }

        let t = st.t + 1;
        let injections = injections_at(case, &self.chronics, t, &redispatch);

        let mut cascade_events = Vec::new();
        let mut wave = 0u32;
        let solver_for = |topo: &Topology| self.cache.get(case, topo);
        let (solver, solution, overload_timer) = loop {
            let solver = solver_for(&topology)?;
            let solution = solver.solve(&injections)?;
            let outcome = run_cascade(
                topology,
                solver,
                solution,
                &injections,
                cfg.hard_overload_rho,
                solver_for,
            )?;
            topology = outcome.topology;
            for trips in &outcome.waves {
                wave += 1;
                for &(l, rho) in trips {
                    cascade_events.push(CascadeEvent {
                        wave,
                        line: case.lines()[l].id.clone(),
                        rho,
                        cause: TripCause::HardOverload,
                    });
                }
            }

            let timers: Vec<u32> = outcome
                .solution
                .rho
                .iter()
                .enumerate()
                .map(|(l, r)| match r {
                    Some(r) if *r >= 1.0 => st.overload_timer[l] + 1,
                    _ => 0,
                })
                .collect();
            let expired: Vec<usize> = (0..n_lines)
                .filter(|&l| timers[l] > cfg.max_overload_steps)
                .collect();
            if expired.is_empty() {
                break (outcome.solver, outcome.solution, timers);
            }
            wave += 1;
            for l in expired {
                topology.line_status[l] = false;
                cascade_events.push(CascadeEvent {
                    wave,
                    line: case.lines()[l].id.clone(),
                    rho: outcome.solution.rho[l].unwrap_or(0.0),
                    cause: TripCause::OverloadTimer,
                });
            }
        };
        for l in 0..n_lines {
            if topology.line_status[l] != st.topology.line_status[l] && !fresh_line_cd[l] {
                line_cooldown[l] = cfg.line_cooldown;
                fresh_line_cd[l] = true;
            }
        }

        let model = solver.model();
        let demanded: f64 = injections.load_p.iter().sum();
        let mut served = 0.0;
        let mut islanded = false;
        for (l, &bus) in model.load_bus.iter().enumerate() {
            if solution.island_served[model.island_of[bus]] {
                served += injections.load_p[l];
            } else {
                islanded = true;
            }
        }
        let mut slack_overflow: Option<f64> = None;
        for g in solution.island_slack.iter().flatten() {
            let gen = &case.generators()[*g];
            let p = solution.gen_p[*g];
            let over = (gen.p_min - p).max(p - gen.p_max);
            if over > MW_TOL {
                slack_overflow = Some(slack_overflow.map_or(over, |o: f64| o.max(over)));
            }
        }

        let termination = if demanded > 0.0 && served < cfg.blackout_fraction * demanded {
            Termination::Blackout
        } else if islanded {
            Termination::IslandedLoad
        } else if t + 1 >= self.chronics.n_steps() {
            Termination::ChronicsExhausted
        } else {
            Termination::None
        };
        let reward = if termination.is_failure() || slack_overflow.is_some() {
            0.0
        } else {
            margin_reward(&solution.rho)
        };

        for (cd, fresh) in line_cooldown.iter_mut().zip(&fresh_line_cd) {
            if !fresh {
                *cd = cd.saturating_sub(1);
            }
        }
        for (cd, fresh) in substation_cooldown.iter_mut().zip(&fresh_sub_cd) {
            if !fresh {
                *cd = cd.saturating_sub(1);
            }
        }

        let next = EnvState {
            t,
            topology,
            redispatch,
            overload_timer,
            line_cooldown,
            substation_cooldown,
            injections: InjectionSet {
                gen_p: solution.gen_p.clone(),
                load_p: injections.load_p,
            },
            solution,
            done: termination != Termination::None,
        };
        let result = StepResult {
            observation: self.observe(&next),
            reward,
            done: next.done,
            termination,
            info: StepInfo {
                illegal_reason,
                cascade: cascade_events,
                slack_overflow_mw: slack_overflow,
                served_load_mw: served,
                demanded_load_mw: demanded,
            },
        };
        Ok((next, result))
    }

    /// Single-line outage screen of the current state; flows only, no timers.
    pub fn n1_screen(&self) -> Result<Vec<ContingencyReport>, EnvError> {
        let case = &*self.case;
        let st = &self.state;
        let mut out = Vec::new();
        for l in 0..case.n_lines() {
            if !st.topology.line_status[l] {
                continue;
            }
            let mut topo = st.topology.clone();
            topo.line_status[l] = false;
            let solver = self.cache.get(case, &topo)?;
            let sol = solver.solve(&st.injections)?;
            let model = solver.model();
            let worst = sol
                .rho
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.map(|r| (i, r)))
                .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
                    Some((_, b)) if b >= r => best,
                    _ => Some((i, r)),
                });
            out.push(ContingencyReport {
                line: case.lines()[l].id.clone(),
                max_rho: worst.map_or(0.0, |w| w.1),
                worst_line: worst.map(|w| case.lines()[w.0].id.clone()),
                unserved_island: sol.island_served.iter().any(|s| !s),
                islanded_load: model
                    .load_bus
                    .iter()
                    .any(|&b| !sol.island_served[model.island_of[b]]),
            });
        }
        Ok(out)
    }
}

/// Chronics injections for step `t` with accumulated redispatch applied to
/// non-slack generators, clipped to their limits.
fn injections_at(case: &GridCase, chronics: &Chronics, t: usize, redispatch: &[f64]) -> InjectionSet {
    let gen_p = case
        .generators()
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            let sched = chronics.gen_p[t][g];
            if Some(g) == case.slack_gen() {
                sched
            } else {
                (sched + redispatch[g]).clamp(gen.p_min, gen.p_max)
            }
        })
        .collect();
    InjectionSet {
        gen_p,
        load_p: chronics.load_p[t].clone(),
    }
}
