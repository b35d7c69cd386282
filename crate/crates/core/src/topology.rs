//! Switchable topology: per-line status plus a busbar (1 or 2) for every
//! connectable element.

use serde::{Deserialize, Serialize};

use crate::case::{ElementRef, GridCase};
use crate::error::GridError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    pub line_status: Vec<bool>,
    pub line_or_bus: Vec<u8>,
    pub line_ex_bus: Vec<u8>,
    pub gen_bus: Vec<u8>,
    pub load_bus: Vec<u8>,
}

/// Sparse change to a topology. Busbar entries must share one substation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopologyDelta {
    pub line_status: Vec<(usize, bool)>,
    pub busbars: Vec<(ElementRef, u8)>,
}

impl TopologyDelta {
    pub fn is_empty(&self) -> bool {
        self.line_status.is_empty() && self.busbars.is_empty()
    }
}

/// All lines in service, every element on busbar 1.
pub fn default_topology(case: &GridCase) -> Topology {
    Topology {
        line_status: vec![true; case.n_lines()],
        line_or_bus: vec![1; case.n_lines()],
        line_ex_bus: vec![1; case.n_lines()],
        gen_bus: vec![1; case.n_generators()],
        load_bus: vec![1; case.n_loads()],
    }
}

impl Topology {
    pub fn busbar(&self, el: ElementRef) -> u8 {
        match el {
            ElementRef::LineOr(l) => self.line_or_bus[l],
            ElementRef::LineEx(l) => self.line_ex_bus[l],
            ElementRef::Gen(g) => self.gen_bus[g],
            ElementRef::Load(l) => self.load_bus[l],
        }
    }

    fn slot_mut(&mut self, el: ElementRef) -> Option<&mut u8> {
        match el {
            ElementRef::LineOr(l) => self.line_or_bus.get_mut(l),
            ElementRef::LineEx(l) => self.line_ex_bus.get_mut(l),
            ElementRef::Gen(g) => self.gen_bus.get_mut(g),
            ElementRef::Load(l) => self.load_bus.get_mut(l),
        }
    }

    /// Checks shape and busbar ranges against a case.
    pub fn check(&self, case: &GridCase) -> Result<(), GridError> {
        let dims = [
            ("line_status", self.line_status.len(), case.n_lines()),
            ("line_or_bus", self.line_or_bus.len(), case.n_lines()),
            ("line_ex_bus", self.line_ex_bus.len(), case.n_lines()),
            ("gen_bus", self.gen_bus.len(), case.n_generators()),
            ("load_bus", self.load_bus.len(), case.n_loads()),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(GridError::TopologyMismatch(format!(
                    "{name} has {got} entries, case has {want}"
                )));
            }
        }
        let all = self
            .line_or_bus
            .iter()
            .enumerate()
            .map(|(i, b)| (ElementRef::LineOr(i), *b))
            .chain(self.line_ex_bus.iter().enumerate().map(|(i, b)| (ElementRef::LineEx(i), *b)))
            .chain(self.gen_bus.iter().enumerate().map(|(i, b)| (ElementRef::Gen(i), *b)))
            .chain(self.load_bus.iter().enumerate().map(|(i, b)| (ElementRef::Load(i), *b)));
        for (el, b) in all {
            if b != 1 && b != 2 {
                return Err(GridError::InvalidBusbar {
                    element: case.element_key(el),
                    busbar: b,
                });
            }
        }
        Ok(())
    }

    /// Substations whose busbar assignments differ between two topologies.
    pub fn changed_substations(&self, other: &Topology, case: &GridCase) -> Vec<usize> {
        (0..case.n_substations())
            .filter(|&s| {
                case.elements_at(s)
                    .iter()
                    .any(|&el| self.busbar(el) != other.busbar(el))
            })
            .collect()
    }
}

fn element_exists(case: &GridCase, el: ElementRef) -> bool {
    match el {
        ElementRef::LineOr(l) | ElementRef::LineEx(l) => l < case.n_lines(),
        ElementRef::Gen(g) => g < case.n_generators(),
        ElementRef::Load(l) => l < case.n_loads(),
    }
}

/// Returns `topo` with `delta` applied; entries not named by the delta are unchanged.
pub fn apply_topology_delta(
    case: &GridCase,
    topo: &Topology,
    delta: &TopologyDelta,
) -> Result<Topology, GridError> {
    let mut next = topo.clone();
    for &(line, status) in &delta.line_status {
        let slot = next
            .line_status
            .get_mut(line)
            .ok_or_else(|| GridError::UnknownElement(format!("line #{line}")))?;
        *slot = status;
    }

    let mut sub = None;
    for &(el, busbar) in &delta.busbars {
        if !element_exists(case, el) {
            return Err(GridError::UnknownElement(format!("{el:?}")));
        }
        if busbar != 1 && busbar != 2 {
            return Err(GridError::InvalidBusbar {
                element: case.element_key(el),
                busbar,
            });
        }
        let s = case.element_sub(el);
        match sub {
            None => sub = Some(s),
            Some(prev) if prev != s => {
                return Err(GridError::MultipleSubstations(format!(
                    "{} and {}",
                    case.substations()[prev].id,
                    case.substations()[s].id
                )))
            }
            _ => {}
        }
        *next.slot_mut(el).expect("checked above") = busbar;
    }
    Ok(next)
}
