mod common;

use std::sync::Arc;

use gridgym::agents::{run_batch, summary_csv, BatchJob, GreedyConfig, Scripted};
use gridgym::{
    run_episode, Action, AgentPolicy, DoNothing, EnvConfig, EpisodeLog, EpisodeSource, Environment, GreedyTopology,
    GridCase, Termination,
};

use common::{case, chronics};

fn episode(agent: &mut dyn AgentPolicy, case_name: &str, ch: &str) -> EpisodeLog {
    let source = EpisodeSource {
        case_path: format!("cases/{case_name}.json"),
        chronics_path: format!("chronics/{ch}"),
    };
    run_episode(agent, case(case_name), &chronics(ch), 0, &EnvConfig::default(), &source).unwrap()
}

/// Every candidate the greedy policy may consider, enumerated here without
/// reference to the library's own candidate generator: do-nothing, each line
/// toggle, then for each substation every two-way layout that differs from
/// the current one as a partition.
fn all_candidates(case: &GridCase, env: &Environment) -> Vec<Action> {
    let obs = env.observation();
    let mut out = vec![Action::do_nothing()];
    for (l, line) in case.lines().iter().enumerate() {
        out.push(Action::line_status(line.id.clone(), !obs.topology.line_status[l]));
    }
    for s in 0..case.n_substations() {
        let els = case.elements_at(s);
        let n = els.len();
        let current: Vec<u8> = els.iter().map(|&e| obs.topology.busbar(e)).collect();
        let mut seen = std::collections::BTreeSet::new();
        for mask in 0u32..(1 << n) {
            let layout: Vec<u8> = (0..n).map(|i| 1 + (mask >> i & 1) as u8).collect();
            // Canonical partition: label of element 0 is 1.
            let canon: Vec<u8> = layout.iter().map(|&b| if layout[0] == 1 { b } else { 3 - b }).collect();
            let cur: Vec<u8> = current.iter().map(|&b| if current[0] == 1 { b } else { 3 - b }).collect();
            if canon == cur || !seen.insert(canon.clone()) {
                continue;
            }
            let changes: Vec<(String, u8)> = (0..n)
                .filter(|&i| layout[i] != current[i])
                .map(|i| (case.element_key(els[i]), layout[i]))
                .collect();
            out.push(Action::busbars(changes));
        }
    }
    out
}

#[test]
fn do_nothing_ignores_state() {
    let e = Environment::new(case("ieee14"), &chronics("ieee14_stress"), EnvConfig::default(), 0).unwrap();
    let mut obs = e.observation();
    for r in obs.rho.iter_mut().take(5) {
        *r = Some(1.3);
    }
    assert!(DoNothing.act(&e, &obs).is_do_nothing());
}

#[test]
fn greedy_waits_below_activation() {
    let e = Environment::new(case("ieee14"), &chronics("ieee14_benign"), EnvConfig::default(), 0).unwrap();
    let obs = e.observation();
    assert!(obs.max_rho() < 0.9);
    assert!(GreedyTopology::default().act(&e, &obs).is_do_nothing());
}

#[test]
fn greedy_picks_the_relieving_split_on_fig5() {
    let case = case("fig5_5sub");
    let e = Environment::new(case.clone(), &chronics("fig5_stress"), EnvConfig::default(), 0).unwrap();
    let baseline = e.simulate(&Action::do_nothing()).unwrap();
    assert!(baseline.observation.max_rho() > 1.0);

    // Argmax over the exhaustive candidate list, same tie rule.
    let mut best: Option<(f64, usize, Action)> = None;
    for action in all_candidates(&case, &e) {
        if e.check_legal(&action).is_err() {
            continue;
        }
        let r = e.simulate(&action).unwrap();
        if r.termination.is_failure() {
            continue;
        }
        let touched = action.elements_touched();
        let better = best
            .as_ref()
            .is_none_or(|(br, bt, _)| r.reward > *br || (r.reward == *br && touched < *bt));
        if better {
            best = Some((r.reward, touched, action));
        }
    }
    let (_, _, oracle) = best.unwrap();

    let chosen = GreedyTopology::default().act(&e, &e.observation());
    assert_eq!(chosen, oracle);
    assert!(chosen.set_line_status.is_empty() && chosen.redispatch.is_empty());
    let s3 = case.substation_index("S3").unwrap();
    for key in chosen.set_busbars.keys() {
        assert_eq!(case.element_sub(case.parse_element_key(key).unwrap()), s3, "{key}");
    }
    let after = e.simulate(&chosen).unwrap();
    assert!(after.observation.max_rho() < baseline.observation.max_rho());
}

#[test]
fn some_split_relieves_fig5() {
    let case = case("fig5_5sub");
    let e = Environment::new(case.clone(), &chronics("fig5_stress"), EnvConfig::default(), 0).unwrap();
    let baseline = e.simulate(&Action::do_nothing()).unwrap().observation.max_rho();
    let relieving: Vec<Action> = all_candidates(&case, &e)
        .into_iter()
        .filter(|a| !a.set_busbars.is_empty())
        .filter(|a| {
            let r = e.simulate(a).unwrap();
            !r.termination.is_failure() && r.observation.max_rho() < baseline
        })
        .collect();
    assert!(!relieving.is_empty());
}

#[test]
fn greedy_falls_back_when_everything_fails() {
    // The next step moves 90 MW across a triangle that cannot carry it on any layout.
    let case = case("triangle3");
    let e = Environment::new(case.clone(), &chronics("triangle_stress"), EnvConfig::default(), 0).unwrap();
    for action in all_candidates(&case, &e) {
        let r = e.simulate(&action).unwrap();
        assert!(r.termination.is_failure(), "{action:?} survives");
    }
    let mut eager = GreedyTopology::new(GreedyConfig {
        activation_rho: 0.0,
        ..GreedyConfig::default()
    });
    assert!(eager.act(&e, &e.observation()).is_do_nothing());
}

#[test]
fn do_nothing_survives_the_benign_day() {
    let log = episode(&mut DoNothing, "ieee14", "ieee14_benign");
    assert_eq!(log.termination(), Termination::ChronicsExhausted);
    assert_eq!(log.steps.len(), 287);
    // Σ γ^t r_t straight from the recorded rewards.
    let gamma = log.header.config.reward.gamma;
    let expect: f64 = log.steps.iter().enumerate().map(|(t, s)| gamma.powi(t as i32) * s.reward).sum();
    assert!(log.score() > 0.0);
    assert!((log.score() - expect).abs() < 1e-9, "{} vs {expect}", log.score());
}

#[test]
fn greedy_beats_do_nothing_under_stress() {
    let dn = episode(&mut DoNothing, "ieee14", "ieee14_stress");
    assert!(dn.termination().is_failure());
    assert!(dn.steps.len() < 35);
    assert_eq!(dn.score(), 0.0);

    let greedy = episode(&mut GreedyTopology::default(), "ieee14", "ieee14_stress");
    assert_eq!(greedy.termination(), Termination::ChronicsExhausted);
    assert!(greedy.score() > dn.score());
    assert!(greedy.steps.iter().all(|s| s.illegal_reason.is_none()));
    assert!(greedy.steps.iter().any(|s| !s.action.set_busbars.is_empty()));
}

#[test]
fn greedy_is_deterministic() {
    let a = episode(&mut GreedyTopology::default(), "ieee14", "ieee14_stress");
    let b = episode(&mut GreedyTopology::default(), "ieee14", "ieee14_stress");
    assert_eq!(a.to_jsonl(), b.to_jsonl());
}

#[test]
fn scripted_actions_replay_into_the_same_log() {
    let greedy = episode(&mut GreedyTopology::default(), "ieee14", "ieee14_stress");
    let actions = greedy.steps.iter().map(|s| s.action.clone()).collect();
    let mut scripted = Scripted::new("greedy", actions);
    let again = episode(&mut scripted, "ieee14", "ieee14_stress");
    assert_eq!(again.lines(), greedy.lines());
}

#[test]
fn batch_matches_sequential_runs() {
    let jobs = |agent: &str| BatchJob {
        agent: agent.into(),
        case: case("ieee14"),
        chronics: Arc::new(chronics("ieee14_stress")),
        seed: 0,
        source: EpisodeSource {
            case_path: "cases/ieee14.json".into(),
            chronics_path: "chronics/ieee14_stress".into(),
        },
    };
    let out = run_batch(vec![jobs("do_nothing"), jobs("greedy"), jobs("nobody")], &EnvConfig::default());
    assert_eq!(out.len(), 3);
    let dn = out[0].as_ref().unwrap();
    let gr = out[1].as_ref().unwrap();
    assert_eq!(dn.lines(), episode(&mut DoNothing, "ieee14", "ieee14_stress").lines());
    assert_eq!(gr.lines(), episode(&mut GreedyTopology::default(), "ieee14", "ieee14_stress").lines());
    assert!(out[2].as_ref().unwrap_err().contains("nobody"));

    let csv = summary_csv(&[("dn".into(), dn.clone()), ("gr".into(), gr.clone())]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "log,agent,case,chronics,steps,termination,score");
    assert!(rows[1].starts_with("dn,do_nothing,ieee14,ieee14_stress,"));
    assert!(rows[1].ends_with(",blackout,0"));
    let mean = (dn.score() + gr.score()) / 2.0;
    assert_eq!(rows[3], format!("aggregate,,,,{},,{mean}", dn.steps.len() + gr.steps.len()));
}
