#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use gridgym::case::CaseFile;
use gridgym::powerflow::InjectionSet;
use gridgym::{load_chronics, BusModel, Chronics, FlowSolution, GridCase};

pub const CASES: [&str; 3] = ["triangle3", "fig5_5sub", "ieee14"];

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn case(name: &str) -> Arc<GridCase> {
    let path = repo_root().join("cases").join(format!("{name}.json"));
    Arc::new(GridCase::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
}

pub fn chronics(name: &str) -> Chronics {
    load_chronics(repo_root().join("chronics").join(name)).unwrap()
}

/// Rebuilds a case after editing its file form.
pub fn edited(case: &GridCase, edit: impl FnOnce(&mut CaseFile)) -> Arc<GridCase> {
    let mut file = case.file().clone();
    edit(&mut file);
    Arc::new(GridCase::from(file))
}

/// Chronics with one load and one generator column, both following `mw`.
pub fn transfer_chronics(load: &str, gen: &str, mw: &[f64]) -> Chronics {
    Chronics {
        name: "transfer".into(),
        meta: Default::default(),
        load_ids: vec![load.into()],
        gen_ids: vec![gen.into()],
        load_p: mw.iter().map(|&p| vec![p]).collect(),
        gen_p: mw.iter().map(|&p| vec![p]).collect(),
    }
}

/// Angles per bus from a dense Gaussian elimination with partial pivoting,
/// built straight from the case data and the bus model. Each served island
/// is solved on its own with the slack bus chosen by the solver pinned at 0.
pub fn dense_angles(case: &GridCase, model: &BusModel, inj: &InjectionSet, sol: &FlowSolution) -> Vec<Option<f64>> {
    let base = case.base_mva();
    let mut theta = vec![None; model.buses.len()];
    for (island, buses) in model.islands.iter().enumerate() {
        let Some(slack_gen) = sol.island_slack[island] else { continue };
        let slack_bus = model.gen_bus[slack_gen];
        let unknowns: Vec<usize> = buses.iter().copied().filter(|&b| b != slack_bus).collect();
        let pos = |b: usize| unknowns.iter().position(|&u| u == b);
        let n = unknowns.len();
        let mut a = vec![vec![0.0; n + 1]; n];
        for (l, inc) in model.line_incidence.iter().enumerate() {
            let Some((i, j)) = *inc else { continue };
            if i == j || !buses.contains(&i) {
                continue;
            }
            let b = 1.0 / case.lines()[l].x_pu;
            for (p, q) in [(i, j), (j, i)] {
                if let Some(r) = pos(p) {
                    a[r][r] += b;
                    if let Some(c) = pos(q) {
                        a[r][c] -= b;
                    }
                }
            }
        }
        for (g, &bus) in model.gen_bus.iter().enumerate() {
            if let Some(r) = pos(bus) {
                a[r][n] += inj.gen_p[g] / base;
            }
        }
        for (l, &bus) in model.load_bus.iter().enumerate() {
            if let Some(r) = pos(bus) {
                a[r][n] -= inj.load_p[l] / base;
            }
        }
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs()))
                .unwrap();
            a.swap(k, piv);
            let pivot = a[k].clone();
            for row in a.iter_mut().skip(k + 1) {
                let f = row[k] / pivot[k];
                for (x, p) in row[k..].iter_mut().zip(&pivot[k..]) {
                    *x -= f * p;
                }
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|c| a[k][c] * x[c]).sum();
            x[k] = (a[k][n] - s) / a[k][k];
        }
        theta[slack_bus] = Some(0.0);
        for (k, &b) in unknowns.iter().enumerate() {
            theta[b] = Some(x[k]);
        }
    }
    theta
}
