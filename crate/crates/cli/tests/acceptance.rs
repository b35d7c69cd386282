//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gridgym::agents::{Scripted, AGENT_NAMES};
use gridgym::env::TripCause;
use gridgym::{
    agents::agent_by_name, default_topology, reduce_to_buses, run_episode, solve_dc, Action, BusModel, EnvConfig,
    EpisodeLog, EpisodeSource, Environment, FlowSolution, GridCase, InjectionSet, Termination,
};
use serde_json::Value;

use common::{case, chronics, dense_angles, edited, repo_root, transfer_chronics, CASES};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn env(case_name: &str, ch: &str) -> Environment {
    Environment::new(case(case_name), &chronics(ch), EnvConfig::default(), 0).unwrap()
}

fn episode(agent: &str, case_name: &str, ch: &str) -> EpisodeLog {
    let mut policy = agent_by_name(agent).unwrap();
    let source = EpisodeSource {
        case_path: format!("cases/{case_name}.json"),
        chronics_path: format!("chronics/{ch}"),
    };
    run_episode(policy.as_mut(), case(case_name), &chronics(ch), 0, &EnvConfig::default(), &source).unwrap()
}

/// Largest per-bus imbalance between injections and outgoing line flows.
fn kcl_worst(model: &BusModel, inj: &InjectionSet, sol: &FlowSolution) -> f64 {
    let mut balance = vec![0.0; model.n_buses()];
    for (g, &b) in model.gen_bus.iter().enumerate() {
        balance[b] += sol.gen_p[g];
    }
    for (l, &b) in model.load_bus.iter().enumerate() {
        balance[b] -= inj.load_p[l];
    }
    for (l, inc) in model.line_incidence.iter().enumerate() {
        if let (Some((i, j)), Some(f)) = (inc, sol.line_flow[l]) {
            balance[*i] -= f;
            balance[*j] += f;
        }
    }
    // Buses of unserved islands carry no solution and are skipped.
    model
        .buses
        .iter()
        .enumerate()
        .filter(|(b, _)| sol.theta[*b].is_some())
        .map(|(b, _)| balance[b].abs())
        .fold(0.0, f64::max)
}

fn kcl() -> Result<String, String> {
    let mut e = env("ieee14", "ieee14_benign");
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut steps = 0;
    loop {
        let obs = e.observation();
        let solver = e.solver().map_err(|x| x.to_string())?;
        worst = worst.max(kcl_worst(solver.model(), &obs.injections, e.solution()));
        steps += 1;
        if e.is_done() {
            break;
        }
        e.step(&Action::do_nothing()).map_err(|x| x.to_string())?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(steps == 288, "{steps} steps");
    ensure!(worst < 1e-9, "max |residual| {worst:e} MW");
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("288 steps, max |residual| {worst:.1e} MW, {secs:.2} s"))
}

/// Σ x·f around each cycle closed by a non-tree line of a BFS spanning tree.
fn cycle_residuals(case: &GridCase, model: &BusModel, sol: &FlowSolution) -> Vec<f64> {
    let n = model.n_buses();
    let mut adj = vec![Vec::new(); n];
    for (l, inc) in model.line_incidence.iter().enumerate() {
        if let Some((i, j)) = *inc {
            adj[i].push((l, j));
            adj[j].push((l, i));
        }
    }
    // parent[b] = (line, parent bus)
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut tree = vec![false; model.line_incidence.len()];
    for root in 0..n {
        if depth[root] != usize::MAX {
            continue;
        }
        depth[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(b) = queue.pop_front() {
            for &(l, o) in &adj[b] {
                if depth[o] == usize::MAX {
                    depth[o] = depth[b] + 1;
                    parent[o] = Some((l, b));
                    tree[l] = true;
                    queue.push_back(o);
                }
            }
        }
    }
    // Voltage drop in per-unit from bus `a` to bus `b` along line l.
    let drop = |l: usize, a: usize| {
        let (from, _) = model.line_incidence[l].unwrap();
        let f = sol.line_flow[l].unwrap() / case.base_mva() * case.lines()[l].x_pu;
        if a == from {
            f
        } else {
            -f
        }
    };
    let mut out = Vec::new();
    for (l, inc) in model.line_incidence.iter().enumerate() {
        let Some((i, j)) = *inc else { continue };
        if tree[l] || sol.line_flow[l].is_none() {
            continue;
        }
        // Go i -> j over the line, then climb back from j and i to their meeting point.
        let mut total = drop(l, i);
        let (mut a, mut b) = (j, i);
        let mut up_a = 0.0;
        let mut up_b = 0.0;
        while a != b {
            if depth[a] >= depth[b] {
                let (pl, p) = parent[a].unwrap();
                up_a += drop(pl, a);
                a = p;
            } else {
                let (pl, p) = parent[b].unwrap();
                up_b += drop(pl, b);
                b = p;
            }
        }
        total += up_a - up_b;
        out.push(total);
    }
    out
}

fn kvl() -> Result<String, String> {
    let case = case("ieee14");
    let ch = chronics("ieee14_benign");
    let model = reduce_to_buses(&case, &default_topology(&case)).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut cycles = 0;
    for t in 0..ch.n_steps() {
        let inj = InjectionSet {
            gen_p: ch.gen_p[t].clone(),
            load_p: ch.load_p[t].clone(),
        };
        let sol = solve_dc(&case, &model, &inj).map_err(|e| e.to_string())?;
        let r = cycle_residuals(&case, &model, &sol);
        cycles = r.len();
        worst = r.iter().fold(worst, |w, x| w.max(x.abs()));
    }
    let expect = case.n_lines() - model.n_buses() + 1;
    ensure!(cycles == expect, "{cycles} cycles, expected {expect}");
    ensure!(worst < 1e-12, "max |Σ x f| {worst:e} pu");
    Ok(format!("{cycles} cycles over 288 injections, max |Σ x f| {worst:.1e} pu"))
}

fn analytic_triangle() -> Result<String, String> {
    let case = case("triangle3");
    let x: Vec<f64> = case.lines().iter().map(|l| l.x_pu).collect();
    ensure!(x[0] == x[1] && x[1] == x[2], "reactances differ: {x:?}");
    let transfer = 90.0;
    let inj = InjectionSet {
        gen_p: vec![transfer],
        load_p: vec![transfer],
    };
    // Current divider: the direct line against the two-line series path.
    let direct = transfer * (x[1] + x[2]) / (x[0] + x[1] + x[2]);
    let series = transfer - direct;
    let mut topo = default_topology(&case);
    let model = reduce_to_buses(&case, &topo).map_err(|e| e.to_string())?;
    let sol = solve_dc(&case, &model, &inj).map_err(|e| e.to_string())?;
    let f: Vec<f64> = sol.line_flow.iter().map(|v| v.unwrap()).collect();
    for (got, want) in f.iter().zip([direct, series, series]) {
        ensure!((got - want).abs() < 1e-9, "flows {f:?}, expected {direct}/{series}/{series}");
    }
    topo.line_status[0] = false;
    let model = reduce_to_buses(&case, &topo).map_err(|e| e.to_string())?;
    let sol = solve_dc(&case, &model, &inj).map_err(|e| e.to_string())?;
    ensure!(sol.line_flow[0].is_none(), "open line carries flow");
    for l in [1, 2] {
        let got = sol.line_flow[l].unwrap();
        ensure!((got - transfer).abs() < 1e-9, "series flow {got}");
    }
    Ok(format!("{:.6}/{:.6}/{:.6} MW, then 90/90 MW", f[0], f[1], f[2]))
}

fn dense_oracle() -> Result<String, String> {
    let mut solves = 0;
    let mut worst = 0.0f64;
    for name in CASES {
        let case = case(name);
        let base = default_topology(&case);
        let mut topologies = vec![base.clone()];
        for l in 0..case.n_lines() {
            let mut t = base.clone();
            t.line_status[l] = false;
            topologies.push(t);
        }
        for (k, topo) in topologies.iter().enumerate() {
            let model = reduce_to_buses(&case, topo).map_err(|e| e.to_string())?;
            let inj = InjectionSet {
                gen_p: case
                    .generators()
                    .iter()
                    .enumerate()
                    .map(|(g, gen)| gen.p_max * (0.1 + 0.05 * ((g + k) % 5) as f64))
                    .collect(),
                load_p: (0..case.n_loads()).map(|l| 5.0 + ((l * 7 + k) % 11) as f64 * 3.0).collect(),
            };
            let sol = solve_dc(&case, &model, &inj).map_err(|e| e.to_string())?;
            let oracle = dense_angles(&case, &model, &inj, &sol);
            for (b, (got, want)) in sol.theta.iter().zip(&oracle).enumerate() {
                match (got, want) {
                    (Some(g), Some(w)) => worst = worst.max((g - w).abs()),
                    (None, None) => {}
                    _ => return Err(format!("{name} topology {k} bus {b}: served status differs")),
                }
            }
            solves += 1;
        }
    }
    ensure!(worst < 1e-9, "max angle gap {worst:e} rad");
    Ok(format!("{solves} solves on {} cases, max angle gap {worst:.1e} rad", CASES.len()))
}

fn cascade() -> Result<String, String> {
    let mut e = env("triangle3", "triangle_stress");
    let mut last = None;
    while !e.is_done() {
        last = Some(e.step(&Action::do_nothing()).map_err(|x| x.to_string())?);
    }
    let r = last.unwrap();
    let trace: Vec<(u32, &str, TripCause)> = r.info.cascade.iter().map(|c| (c.wave, c.line.as_str(), c.cause)).collect();
    let hard = TripCause::HardOverload;
    ensure!(
        trace == vec![(1, "AB", hard), (2, "AC", hard), (2, "CB", hard)],
        "trace {trace:?}"
    );
    ensure!(r.termination == Termination::Blackout, "termination {:?}", r.termination);
    ensure!(r.reward == 0.0, "final reward {}", r.reward);
    Ok(format!(
        "t={}: wave 1 AB (ρ {:.3}), wave 2 AC+CB (ρ {:.3}), blackout, reward 0",
        r.observation.timestep, r.info.cascade[0].rho, r.info.cascade[1].rho
    ))
}

fn overload_timer() -> Result<String, String> {
    // Limits chosen so the direct line carries 2/3 of an 82.5 MW transfer: 55 MW on 50.
    let case = edited(&case("triangle3"), |f| {
        for (line, limit) in f.lines.iter_mut().zip([50.0, 100.0, 100.0]) {
            line.limit_mw = limit;
        }
    });
    let mut mw = vec![30.0];
    mw.extend([82.5; 8]);
    let cfg = EnvConfig::default();
    let mut e = Environment::new(case, &transfer_chronics("lB", "gA", &mw), cfg.clone(), 0).unwrap();
    let mut tripped_at = None;
    for t in 1..mw.len() {
        let r = e.step(&Action::do_nothing()).map_err(|x| x.to_string())?;
        if let Some(ev) = r.info.cascade.first() {
            ensure!(ev.cause == TripCause::OverloadTimer, "cause {:?}", ev.cause);
            ensure!((ev.rho - 1.1).abs() < 1e-12, "tripped at ρ {}", ev.rho);
            tripped_at = Some(t);
            break;
        }
        let rho = r.observation.rho[0].unwrap();
        ensure!((rho - 1.1).abs() < 1e-12, "ρ {rho} at t={t}");
        ensure!(r.observation.overload_timer[0] as usize == t, "timer at t={t}");
    }
    // Timer is 1 after the first overloaded step; it first exceeds the allowance one step later.
    let expect = cfg.max_overload_steps as usize + 1;
    ensure!(tripped_at == Some(expect), "tripped at {tripped_at:?}, expected {expect}");
    Ok(format!("ρ 1.1 held, tripped at step {expect} (timer {expect} > {})", cfg.max_overload_steps))
}

fn topology_relief() -> Result<String, String> {
    let case = case("fig5_5sub");
    let e = env("fig5_5sub", "fig5_stress");
    let baseline = e.simulate(&Action::do_nothing()).map_err(|x| x.to_string())?.observation.max_rho();
    let obs = e.observation();
    let mut tried = 0;
    let mut relieving = Vec::new();
    for s in 0..case.n_substations() {
        let els = case.elements_at(s);
        // Element 0 stays on busbar 1; every other element picks a side.
        for mask in 1u32..(1 << (els.len() - 1)) {
            let changes: Vec<(String, u8)> = els
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(i, _)| mask >> (i - 1) & 1 == 1)
                .map(|(_, &el)| (case.element_key(el), 2))
                .collect();
            let action = Action::busbars(changes);
            if e.check_legal(&action).is_err() {
                continue;
            }
            tried += 1;
            let Ok(r) = e.simulate(&action) else { continue };
            if !r.termination.is_failure() && r.info.slack_overflow_mw.is_none() && r.observation.max_rho() < baseline {
                relieving.push((case.substations()[s].id.clone(), r.observation.max_rho()));
            }
        }
    }
    ensure!(obs.topology.line_or_bus.iter().all(|&b| b == 1), "start topology not coupled");
    ensure!(!relieving.is_empty(), "none of {tried} splits lowers max ρ below {baseline:.3}");
    let best = relieving.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let mut subs: Vec<&str> = relieving.iter().map(|r| r.0.as_str()).collect();
    subs.dedup();
    Ok(format!(
        "{} of {tried} splits relieve (at {}); do-nothing max ρ {baseline:.3}, best {best:.3}",
        relieving.len(),
        subs.join(", ")
    ))
}

fn agent_ordering() -> Result<String, String> {
    let mut parts = Vec::new();
    for (c, ch) in [("ieee14", "ieee14_stress"), ("fig5_5sub", "fig5_stress")] {
        let dn = episode("do_nothing", c, ch).score();
        let gr = episode("greedy", c, ch).score();
        ensure!(gr > dn && dn >= 0.0, "{ch}: greedy {gr} vs do-nothing {dn}");
        parts.push(format!("{ch} {gr:.3} > {dn:.3}"));
    }
    let log = episode("do_nothing", "ieee14", "ieee14_benign");
    ensure!(!log.termination().is_failure(), "benign episode failed: {:?}", log.termination());
    // Recompute the discounted return straight from the serialized lines.
    let mut gamma = None;
    let mut recomputed = 0.0;
    let mut discount = 1.0;
    let mut logged = None;
    for line in log.to_jsonl().lines() {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        match v["type"].as_str() {
            Some("header") => gamma = v["config"]["reward"]["gamma"].as_f64(),
            Some("step") => {
                recomputed += discount * v["reward"].as_f64().unwrap();
                discount *= gamma.unwrap();
            }
            Some("summary") => logged = v["score"].as_f64(),
            _ => {}
        }
    }
    let logged = logged.unwrap();
    ensure!((logged - recomputed).abs() < 1e-9, "logged {logged} vs recomputed {recomputed}");
    parts.push(format!("benign do-nothing {logged:.3} = Σγᵗr_t"));
    Ok(parts.join("; "))
}

fn gridgym(args: &[&str]) -> Result<i32, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gridgym"))
        .args(args)
        .current_dir(repo_root())
        .env_remove("GRIDGYM_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    out.status.code().ok_or_else(|| "killed by signal".into())
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let (a, b) = (path("a.jsonl"), path("b.jsonl"));
    for out in [&a, &b] {
        let code = gridgym(&[
            "run",
            "--case",
            "cases/fig5_5sub.json",
            "--chronics",
            "chronics/fig5_stress",
            "--agent",
            "greedy",
            "--out",
            out,
        ])?;
        ensure!(code == 0, "run exited {code}");
    }
    let bytes = std::fs::read(&a).map_err(|e| e.to_string())?;
    ensure!(bytes == std::fs::read(&b).map_err(|e| e.to_string())?, "two runs differ");
    let code = gridgym(&["replay", "--log", &a, "--verify"])?;
    ensure!(code == 0, "replay --verify exited {code}");

    // Flip one bit at evenly spaced offsets, including the header, steps and summary.
    let tampered = path("t.jsonl");
    let n = 48;
    for k in 0..n {
        let offset = k * (bytes.len() - 1) / (n - 1);
        let bit = k % 7;
        let mut copy = bytes.clone();
        copy[offset] ^= 1 << bit;
        std::fs::write(&tampered, &copy).map_err(|e| e.to_string())?;
        let code = gridgym(&["replay", "--log", &tampered, "--verify"])?;
        ensure!(code == 4, "flipping bit {bit} of byte {offset} gave exit {code}");
    }
    Ok(format!("identical runs ({} bytes), replay exit 0, {n} single-bit flips all exit 4", bytes.len()))
}

fn failure_scores_zero() -> Result<String, String> {
    let mut failures = 0;
    let mut check = |log: &EpisodeLog, what: &str| -> Result<(), String> {
        if log.termination().is_failure() {
            ensure!(log.score() == 0.0, "{what}: failed episode scored {}", log.score());
            failures += 1;
        }
        Ok(())
    };
    for agent in AGENT_NAMES {
        for (c, ch) in [("triangle3", "triangle_stress"), ("ieee14", "ieee14_stress")] {
            check(&episode(agent, c, ch), &format!("{agent} on {ch}"))?;
        }
    }
    // Random line switching on the stress day.
    let case = case("ieee14");
    let ch = chronics("ieee14_stress");
    let mut state = 0x2545F4914F6CDD1Du64;
    for run in 0..24 {
        let actions: Vec<Action> = (0..36)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                if state.is_multiple_of(3) {
                    let l = (state >> 8) as usize % case.n_lines();
                    Action::line_status(case.lines()[l].id.clone(), (state >> 40).is_multiple_of(4))
                } else {
                    Action::do_nothing()
                }
            })
            .collect();
        let mut agent = Scripted::new("random", actions);
        let log = run_episode(&mut agent, case.clone(), &ch, run, &EnvConfig::default(), &EpisodeSource::default())
            .map_err(|e| e.to_string())?;
        check(&log, &format!("random script {run}"))?;
    }
    ensure!(failures >= 5, "only {failures} failing episodes exercised");
    Ok(format!("{failures} failed episodes, all scored exactly 0"))
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("kirchhoff current law", kcl),
        ("kirchhoff voltage law", kvl),
        ("analytic triangle", analytic_triangle),
        ("dense solver oracle", dense_oracle),
        ("reroute and cascade", cascade),
        ("overload timer", overload_timer),
        ("topology relief", topology_relief),
        ("agent ordering", agent_ordering),
        ("replay determinism", determinism),
        ("failure scores zero", failure_scores_zero),
    ];
    assert!(Path::new(&repo_root()).join("cases").is_dir());
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
