//! DC power flow over a reduced bus model.
//!
//! Per served island the reduced susceptance system `B'θ = P` is factored once
//! and reused for any injection set. Flows are computed in per-unit on the
//! case base and reported in MW.

use serde::{Deserialize, Serialize};

use crate::buses::BusModel;
use crate::case::GridCase;
use crate::error::PowerFlowError;
use crate::sparse::{LdlFactor, SymmetricBuilder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSet {
    pub gen_p: Vec<f64>,
    pub load_p: Vec<f64>,
}

impl InjectionSet {
    pub fn zeros(case: &GridCase) -> Self {
        Self {
            gen_p: vec![0.0; case.n_generators()],
            load_p: vec![0.0; case.n_loads()],
        }
    }

    pub fn total_load(&self) -> f64 {
        self.load_p.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    /// Bus angle in radians; `None` for buses in unserved islands.
    pub theta: Vec<Option<f64>>,
    /// MW from-bus to to-bus; `None` for out-of-service lines.
    pub line_flow: Vec<Option<f64>>,
    pub rho: Vec<Option<f64>>,
    pub island_served: Vec<bool>,
    /// Generator balancing each island, if any.
    pub island_slack: Vec<Option<usize>>,
    /// Generator output after slack balancing.
    pub gen_p: Vec<f64>,
}

impl FlowSolution {
    pub fn max_rho(&self) -> f64 {
        self.rho.iter().flatten().fold(0.0, |m, r| m.max(*r))
    }
}

#[derive(Debug, Clone)]
struct IslandSystem {
    buses: Vec<usize>,
    gens: Vec<usize>,
    loads: Vec<usize>,
    slack_gen: Option<usize>,
    slack_bus: Option<usize>,
    matrix: SymmetricBuilder,
    factor: Option<LdlFactor>,
}

/// Factored DC system for one (case, topology). Immutable after construction,
/// so concurrent solves with different injections are safe.
#[derive(Debug, Clone)]
pub struct DcSolver {
    base_mva: f64,
    x_pu: Vec<f64>,
    limit_mw: Vec<f64>,
    n_gens: usize,
    n_loads: usize,
    model: BusModel,
    islands: Vec<IslandSystem>,
    /// Position of each bus in its island's reduced system; `None` for island slack buses.
    reduced_index: Vec<Option<usize>>,
}

impl DcSolver {
    pub fn new(case: &GridCase, model: &BusModel) -> Result<Self, PowerFlowError> {
        if model.line_incidence.len() != case.n_lines()
            || model.gen_bus.len() != case.n_generators()
            || model.load_bus.len() != case.n_loads()
        {
            return Err(PowerFlowError::DimensionMismatch(
                "bus model was built for a different case".into(),
            ));
        }
        let n_islands = model.islands.len();
        let mut gens = vec![Vec::new(); n_islands];
        for (g, &bus) in model.gen_bus.iter().enumerate() {
            gens[model.island_of[bus]].push(g);
        }
        let mut loads = vec![Vec::new(); n_islands];
        for (l, &bus) in model.load_bus.iter().enumerate() {
            loads[model.island_of[bus]].push(l);
        }

        let mut reduced_index = vec![None; model.n_buses()];
        let mut islands = Vec::with_capacity(n_islands);
        for (k, buses) in model.islands.iter().enumerate() {
            let global = case
                .slack_gen()
                .filter(|&g| model.island_of[model.gen_bus[g]] == k);
            // Local slack: largest p_max, lowest index on ties.
            let slack_gen = global.or_else(|| {
                gens[k].iter().copied().reduce(|best, g| {
                    if case.generators()[g].p_max > case.generators()[best].p_max {
                        g
                    } else {
                        best
                    }
                })
            });
            let slack_bus = slack_gen.map(|g| model.gen_bus[g]);

            let mut n = 0;
            if slack_gen.is_some() {
                for &b in buses {
                    if Some(b) != slack_bus {
                        reduced_index[b] = Some(n);
                        n += 1;
                    }
                }
            }
            islands.push(IslandSystem {
                buses: buses.clone(),
                gens: std::mem::take(&mut gens[k]),
                loads: std::mem::take(&mut loads[k]),
                slack_gen,
                slack_bus,
                matrix: SymmetricBuilder::new(n),
                factor: None,
            });
        }

        for (l, inc) in model.line_incidence.iter().enumerate() {
            let Some((a, b)) = *inc else { continue };
            if a == b {
                continue;
            }
            let island = &mut islands[model.island_of[a]];
            if island.slack_gen.is_none() {
                continue;
            }
            let y = 1.0 / case.lines()[l].x_pu;
            let (ia, ib) = (reduced_index[a], reduced_index[b]);
            if let Some(i) = ia {
                island.matrix.add(i, i, y);
            }
            if let Some(j) = ib {
                island.matrix.add(j, j, y);
            }
            if let (Some(i), Some(j)) = (ia, ib) {
                island.matrix.add(i, j, -y);
            }
        }
        for (k, island) in islands.iter_mut().enumerate() {
            if island.slack_gen.is_some() {
                let f = island
                    .matrix
                    .factor()
                    .map_err(|pivot| PowerFlowError::SingularSystem { island: k, pivot })?;
                island.factor = Some(f);
            }
        }

        Ok(Self {
            base_mva: case.base_mva(),
            x_pu: case.lines().iter().map(|l| l.x_pu).collect(),
            limit_mw: case.lines().iter().map(|l| l.limit_mw).collect(),
            n_gens: case.n_generators(),
            n_loads: case.n_loads(),
            model: model.clone(),
            islands,
            reduced_index,
        })
    }

    pub fn model(&self) -> &BusModel {
        &self.model
    }

    pub fn solve(&self, inj: &InjectionSet) -> Result<FlowSolution, PowerFlowError> {
        if inj.gen_p.len() != self.n_gens || inj.load_p.len() != self.n_loads {
            return Err(PowerFlowError::DimensionMismatch(format!(
                "injections have {} generators / {} loads, case has {} / {}",
                inj.gen_p.len(),
                inj.load_p.len(),
                self.n_gens,
                self.n_loads
            )));
        }
        let model = &self.model;
        let mut gen_p = inj.gen_p.clone();
        let mut theta = vec![None; model.n_buses()];
        let mut island_served = Vec::with_capacity(self.islands.len());
        let mut island_slack = Vec::with_capacity(self.islands.len());

        for island in &self.islands {
            island_served.push(island.slack_gen.is_some());
            island_slack.push(island.slack_gen);
            let (Some(slack), Some(factor)) = (island.slack_gen, &island.factor) else {
                continue;
            };
            let demand: f64 = island.loads.iter().map(|&l| inj.load_p[l]).sum();
            let others: f64 = island
                .gens
                .iter()
                .filter(|&&g| g != slack)
                .map(|&g| inj.gen_p[g])
                .sum();
            gen_p[slack] = demand - others;

            let mut p = vec![0.0; factor.dim()];
            for &g in &island.gens {
                if let Some(i) = self.reduced_index[model.gen_bus[g]] {
                    p[i] += gen_p[g] / self.base_mva;
                }
            }
            for &l in &island.loads {
                if let Some(i) = self.reduced_index[model.load_bus[l]] {
                    p[i] -= inj.load_p[l] / self.base_mva;
                }
            }
            let angles = factor.solve(&p);
            for &b in &island.buses {
                theta[b] = Some(match self.reduced_index[b] {
                    Some(i) => angles[i],
                    None => 0.0,
                });
            }
            debug_assert!(island.slack_bus.is_some());
        }

        let line_flow: Vec<Option<f64>> = model
            .line_incidence
            .iter()
            .enumerate()
            .map(|(l, inc)| {
                inc.map(|(a, b)| match (theta[a], theta[b]) {
                    (Some(ta), Some(tb)) => (ta - tb) / self.x_pu[l] * self.base_mva,
                    _ => 0.0,
                })
            })
            .collect();
        let rho = line_flow
            .iter()
            .zip(&self.limit_mw)
            .map(|(f, lim)| f.map(|f| f.abs() / lim))
            .collect();

        Ok(FlowSolution {
            theta,
            line_flow,
            rho,
            island_served,
            island_slack,
            gen_p,
        })
    }

    /// Reduced susceptance matrices per island (dense, per-unit) for debugging.
    pub fn dump(&self) -> serde_json::Value {
        let islands: Vec<_> = self
            .islands
            .iter()
            .map(|i| {
                let mut order = vec![0; i.matrix.dim()];
                for &b in &i.buses {
                    if let Some(k) = self.reduced_index[b] {
                        order[k] = b;
                    }
                }
                serde_json::json!({
                    "buses": i.buses,
                    "slack_bus": i.slack_bus,
                    "slack_gen": i.slack_gen,
                    "reduced_buses": order,
                    "b_prime": i.matrix.to_dense(),
                    "factor_nnz": i.factor.as_ref().map(LdlFactor::nnz),
                })
            })
            .collect();
        serde_json::json!({ "base_mva": self.base_mva, "islands": islands })
    }
}

pub fn solve_dc(
    case: &GridCase,
    model: &BusModel,
    inj: &InjectionSet,
) -> Result<FlowSolution, PowerFlowError> {
    DcSolver::new(case, model)?.solve(inj)
}

/// Per-bus net injection minus net outgoing flow, in MW.
pub fn kcl_residual(model: &BusModel, inj: &InjectionSet, sol: &FlowSolution) -> Vec<f64> {
    let mut r = vec![0.0; model.n_buses()];
    for (g, &bus) in model.gen_bus.iter().enumerate() {
        if sol.island_served[model.island_of[bus]] {
            r[bus] += sol.gen_p[g];
        }
    }
    for (l, &bus) in model.load_bus.iter().enumerate() {
        if sol.island_served[model.island_of[bus]] {
            r[bus] -= inj.load_p[l];
        }
    }
    for (inc, f) in model.line_incidence.iter().zip(&sol.line_flow) {
        if let (Some((a, b)), Some(f)) = (inc, f) {
            r[*a] -= f;
            r[*b] += f;
        }
    }
    r
}

/// Signed sum of `x · f / base` around an ordered closed walk of in-service lines.
pub fn kvl_cycle_residual(
    case: &GridCase,
    model: &BusModel,
    sol: &FlowSolution,
    cycle: &[usize],
) -> Result<f64, PowerFlowError> {
    let ends = |l: usize| -> Result<(usize, usize), PowerFlowError> {
        model
            .line_incidence
            .get(l)
            .copied()
            .flatten()
            .ok_or_else(|| PowerFlowError::NotACycle(format!("line #{l} is not in service")))
    };
    let first = *cycle
        .first()
        .ok_or_else(|| PowerFlowError::NotACycle("empty line list".into()))?;
    let (a0, b0) = ends(first)?;

    'start: for start in [a0, b0] {
        let mut cur = start;
        let mut sum = 0.0;
        for &l in cycle {
            let (a, b) = ends(l)?;
            let flow = sol.line_flow[l].unwrap_or(0.0);
            let drop = case.lines()[l].x_pu * flow / case.base_mva();
            if a == cur {
                sum += drop;
                cur = b;
            } else if b == cur {
                sum -= drop;
                cur = a;
            } else {
                continue 'start;
            }
        }
        if cur == start {
            return Ok(sum);
        }
    }
    Err(PowerFlowError::NotACycle(format!(
        "lines {cycle:?} do not form a closed walk"
    )))
}

/// One cycle per in-service line outside a BFS spanning forest.
pub fn fundamental_cycles(model: &BusModel) -> Vec<Vec<usize>> {
    let n = model.n_buses();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (l, inc) in model.line_incidence.iter().enumerate() {
        if let Some((a, b)) = *inc {
            if a != b {
                adj[a].push((b, l));
                adj[b].push((a, l));
            }
        }
    }
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut tree_line = vec![false; model.line_incidence.len()];
    for root in 0..n {
        if depth[root] != usize::MAX {
            continue;
        }
        depth[root] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, l) in &adj[u] {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    parent[v] = Some((u, l));
                    tree_line[l] = true;
                    queue.push_back(v);
                }
            }
        }
    }

    let mut cycles = Vec::new();
    for (l, inc) in model.line_incidence.iter().enumerate() {
        let Some((a, b)) = *inc else { continue };
        if tree_line[l] || a == b {
            continue;
        }
        // a -> b along l, then b back to a through the tree.
        let (mut u, mut v) = (b, a);
        let mut up_from_b = Vec::new();
        let mut up_from_a = Vec::new();
        while depth[u] > depth[v] {
            let (p, pl) = parent[u].expect("non-root");
            up_from_b.push(pl);
            u = p;
        }
        while depth[v] > depth[u] {
            let (p, pl) = parent[v].expect("non-root");
            up_from_a.push(pl);
            v = p;
        }
        while u != v {
            let (pu, lu) = parent[u].expect("non-root");
            let (pv, lv) = parent[v].expect("non-root");
            up_from_b.push(lu);
            up_from_a.push(lv);
            u = pu;
            v = pv;
        }
        let mut cycle = vec![l];
        cycle.extend(up_from_b);
        cycle.extend(up_from_a.into_iter().rev());
        cycles.push(cycle);
    }
    cycles
}

/// `|f| / limit` for in-service lines.
pub fn loadings(case: &GridCase, sol: &FlowSolution) -> Vec<Option<f64>> {
    sol.line_flow
        .iter()
        .zip(case.lines())
        .map(|(f, line)| f.map(|f| f.abs() / line.limit_mw))
        .collect()
}
