//! Node-breaker to bus-branch reduction.
//!
//! Each occupied (substation, busbar) pair becomes one electrical bus. Buses
//! are ordered by substation index, then busbar, and islands are listed in
//! order of their smallest bus.

use petgraph::unionfind::UnionFind;
use serde::Serialize;

use crate::case::{ElementRef, GridCase};
use crate::error::GridError;
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bus {
    pub substation: usize,
    pub busbar: u8,
    pub elements: Vec<ElementRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusModel {
    pub buses: Vec<Bus>,
    pub islands: Vec<Vec<usize>>,
    pub island_of: Vec<usize>,
    pub slack_bus: Option<usize>,
    /// `(from_bus, to_bus)` for in-service lines, `None` otherwise.
    pub line_incidence: Vec<Option<(usize, usize)>>,
    pub gen_bus: Vec<usize>,
    pub load_bus: Vec<usize>,
}

impl BusModel {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }
}

pub fn reduce_to_buses(case: &GridCase, topo: &Topology) -> Result<BusModel, GridError> {
    topo.check(case)?;

    // bus_at[sub][busbar - 1]
    let mut bus_at = vec![[usize::MAX; 2]; case.n_substations()];
    let mut buses: Vec<Bus> = Vec::new();
    for (sub, slots) in bus_at.iter_mut().enumerate() {
        for busbar in 1..=2u8 {
            let elements: Vec<ElementRef> = case
                .elements_at(sub)
                .iter()
                .copied()
                .filter(|&el| topo.busbar(el) == busbar)
                .collect();
            if !elements.is_empty() {
                slots[busbar as usize - 1] = buses.len();
                buses.push(Bus {
                    substation: sub,
                    busbar,
                    elements,
                });
            }
        }
    }
    let bus_of = |el: ElementRef| bus_at[case.element_sub(el)][topo.busbar(el) as usize - 1];

    let line_incidence: Vec<Option<(usize, usize)>> = (0..case.n_lines())
        .map(|l| {
            topo.line_status[l].then(|| (bus_of(ElementRef::LineOr(l)), bus_of(ElementRef::LineEx(l))))
        })
        .collect();

    let mut uf = UnionFind::<usize>::new(buses.len());
    for &(a, b) in line_incidence.iter().flatten() {
        uf.union(a, b);
    }
    let mut island_of = vec![usize::MAX; buses.len()];
    let mut islands: Vec<Vec<usize>> = Vec::new();
    let mut root_island = vec![usize::MAX; buses.len()];
    for (bus, island) in island_of.iter_mut().enumerate() {
        let root = uf.find(bus);
        if root_island[root] == usize::MAX {
            root_island[root] = islands.len();
            islands.push(Vec::new());
        }
        *island = root_island[root];
        islands[*island].push(bus);
    }

    let gen_bus: Vec<usize> = (0..case.n_generators()).map(|g| bus_of(ElementRef::Gen(g))).collect();
    let load_bus: Vec<usize> = (0..case.n_loads()).map(|l| bus_of(ElementRef::Load(l))).collect();
    let slack_bus = case.slack_gen().map(|g| gen_bus[g]);

    Ok(BusModel {
        buses,
        islands,
        island_of,
        slack_bus,
        line_incidence,
        gen_bus,
        load_bus,
    })
}
