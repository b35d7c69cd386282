//! Static grid description and its JSON case-file form.
//!
//! A [`GridCase`] is loaded leniently: dangling references survive parsing so
//! that [`validate_case`] can report them as data. Everything downstream of
//! validation assumes a well-formed case.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::IoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substation {
    pub id: String,
    pub name: String,
    pub kv: f64,
    /// Optional diagram position, ignored by the physics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from: String,
    pub to: String,
    pub x_pu: f64,
    pub limit_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub sub: String,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp: f64,
    #[serde(default)]
    pub slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: String,
    pub sub: String,
}

/// On-disk layout of a case; field order is the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub base_mva: f64,
    pub substations: Vec<Substation>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<Load>,
}

/// A connectable element at a substation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ElementRef {
    LineOr(usize),
    LineEx(usize),
    Gen(usize),
    Load(usize),
}

/// Immutable grid description with resolved substation indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    file: CaseFile,
    line_from: Vec<Option<usize>>,
    line_to: Vec<Option<usize>>,
    gen_sub: Vec<Option<usize>>,
    load_sub: Vec<Option<usize>>,
    elements_at: Vec<Vec<ElementRef>>,
    slack: Option<usize>,
    sub_index: HashMap<String, usize>,
    line_index: HashMap<String, usize>,
    gen_index: HashMap<String, usize>,
    load_index: HashMap<String, usize>,
}

fn first_index(ids: impl Iterator<Item = String>) -> HashMap<String, usize> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        map.entry(id).or_insert(i);
    }
    map
}

impl From<CaseFile> for GridCase {
    fn from(file: CaseFile) -> Self {
        let sub_index = first_index(file.substations.iter().map(|s| s.id.clone()));
        let line_index = first_index(file.lines.iter().map(|l| l.id.clone()));
        let gen_index = first_index(file.generators.iter().map(|g| g.id.clone()));
        let load_index = first_index(file.loads.iter().map(|l| l.id.clone()));

        let resolve = |id: &str| sub_index.get(id).copied();
        let line_from: Vec<_> = file.lines.iter().map(|l| resolve(&l.from)).collect();
        let line_to: Vec<_> = file.lines.iter().map(|l| resolve(&l.to)).collect();
        let gen_sub: Vec<_> = file.generators.iter().map(|g| resolve(&g.sub)).collect();
        let load_sub: Vec<_> = file.loads.iter().map(|l| resolve(&l.sub)).collect();

        let mut elements_at = vec![Vec::new(); file.substations.len()];
        for (i, (from, to)) in line_from.iter().zip(&line_to).enumerate() {
            if let Some(s) = from {
                elements_at[*s].push(ElementRef::LineOr(i));
            }
            if let Some(s) = to {
                elements_at[*s].push(ElementRef::LineEx(i));
            }
        }
        for (i, s) in gen_sub.iter().enumerate() {
            if let Some(s) = s {
                elements_at[*s].push(ElementRef::Gen(i));
            }
        }
        for (i, s) in load_sub.iter().enumerate() {
            if let Some(s) = s {
                elements_at[*s].push(ElementRef::Load(i));
            }
        }
        let slack = file.generators.iter().position(|g| g.slack);

        GridCase {
            file,
            line_from,
            line_to,
            gen_sub,
            load_sub,
            elements_at,
            slack,
            sub_index,
            line_index,
            gen_index,
            load_index,
        }
    }
}

impl GridCase {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str::<CaseFile>(text).map(GridCase::from)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut case = Self::from_json(&text).map_err(|e| IoError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if case.file.name.is_empty() {
            if let Some(stem) = path.file_stem() {
                case.file.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(case)
    }

    /// Canonical JSON form: declaration field order, shortest round-trip floats.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("case serializes")
    }

    pub fn file(&self) -> &CaseFile {
        &self.file
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn base_mva(&self) -> f64 {
        self.file.base_mva
    }

    pub fn substations(&self) -> &[Substation] {
        &self.file.substations
    }

    pub fn lines(&self) -> &[Line] {
        &self.file.lines
    }

    pub fn generators(&self) -> &[Generator] {
        &self.file.generators
    }

    pub fn loads(&self) -> &[Load] {
        &self.file.loads
    }

    pub fn n_substations(&self) -> usize {
        self.file.substations.len()
    }

    pub fn n_lines(&self) -> usize {
        self.file.lines.len()
    }

    pub fn n_generators(&self) -> usize {
        self.file.generators.len()
    }

    pub fn n_loads(&self) -> usize {
        self.file.loads.len()
    }

    /// Index of the first generator flagged as slack.
    pub fn slack_gen(&self) -> Option<usize> {
        self.slack
    }

    /// Substation endpoints of a line. Panics on an unvalidated dangling reference.
    pub fn line_subs(&self, line: usize) -> (usize, usize) {
        (
            self.line_from[line].expect("validated case"),
            self.line_to[line].expect("validated case"),
        )
    }

    pub fn gen_sub(&self, gen: usize) -> usize {
        self.gen_sub[gen].expect("validated case")
    }

    pub fn load_sub(&self, load: usize) -> usize {
        self.load_sub[load].expect("validated case")
    }

    pub fn element_sub(&self, el: ElementRef) -> usize {
        match el {
            ElementRef::LineOr(l) => self.line_subs(l).0,
            ElementRef::LineEx(l) => self.line_subs(l).1,
            ElementRef::Gen(g) => self.gen_sub(g),
            ElementRef::Load(l) => self.load_sub(l),
        }
    }

    /// Connectable elements of a substation: line ends in line order, then generators, then loads.
    pub fn elements_at(&self, sub: usize) -> &[ElementRef] {
        &self.elements_at[sub]
    }

    pub fn substation_index(&self, id: &str) -> Option<usize> {
        self.sub_index.get(id).copied()
    }

    pub fn line_index(&self, id: &str) -> Option<usize> {
        self.line_index.get(id).copied()
    }

    pub fn gen_index(&self, id: &str) -> Option<usize> {
        self.gen_index.get(id).copied()
    }

    pub fn load_index(&self, id: &str) -> Option<usize> {
        self.load_index.get(id).copied()
    }

    /// Textual key of an element, e.g. `gen:g2` or `line_or:L7`.
    pub fn element_key(&self, el: ElementRef) -> String {
        match el {
            ElementRef::LineOr(l) => format!("line_or:{}", self.file.lines[l].id),
            ElementRef::LineEx(l) => format!("line_ex:{}", self.file.lines[l].id),
            ElementRef::Gen(g) => format!("gen:{}", self.file.generators[g].id),
            ElementRef::Load(l) => format!("load:{}", self.file.loads[l].id),
        }
    }

    pub fn parse_element_key(&self, key: &str) -> Option<ElementRef> {
        let (kind, id) = key.split_once(':')?;
        match kind {
            "line_or" => self.line_index(id).map(ElementRef::LineOr),
            "line_ex" => self.line_index(id).map(ElementRef::LineEx),
            "gen" => self.gen_index(id).map(ElementRef::Gen),
            "load" => self.load_index(id).map(ElementRef::Load),
            _ => None,
        }
    }
}

/// Lists every invariant violation of a case. An empty list means the case is well formed.
pub fn validate_case(case: &GridCase) -> Vec<String> {
    let mut out = Vec::new();
    let f = &case.file;

    if !(f.base_mva > 0.0 && f.base_mva.is_finite()) {
        out.push(format!("base_mva must be positive, got {}", f.base_mva));
    }

    let mut dup = |class: &str, ids: Vec<&String>| {
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id) {
                out.push(format!("duplicate {class} id `{id}`"));
            }
        }
    };
    dup("substation", f.substations.iter().map(|s| &s.id).collect());
    dup("line", f.lines.iter().map(|l| &l.id).collect());
    dup("generator", f.generators.iter().map(|g| &g.id).collect());
    dup("load", f.loads.iter().map(|l| &l.id).collect());

    let slack_count = f.generators.iter().filter(|g| g.slack).count();
    if slack_count == 0 && !f.generators.is_empty() {
        out.push("no slack generator".to_string());
    } else if slack_count > 1 {
        let ids: Vec<_> = f.generators.iter().filter(|g| g.slack).map(|g| g.id.as_str()).collect();
        out.push(format!("multiple slack generators: {}", ids.join(", ")));
    }

    for (i, l) in f.lines.iter().enumerate() {
        if case.line_from[i].is_none() {
            out.push(format!("line `{}` references unknown substation `{}`", l.id, l.from));
        }
        if case.line_to[i].is_none() {
            out.push(format!("line `{}` references unknown substation `{}`", l.id, l.to));
        }
        if l.from == l.to {
            out.push(format!("line `{}` connects substation `{}` to itself", l.id, l.from));
        }
        if !(l.x_pu > 0.0 && l.x_pu.is_finite()) {
            out.push(format!("line `{}` has non-positive reactance x = {}", l.id, l.x_pu));
        }
        if !(l.limit_mw > 0.0 && l.limit_mw.is_finite()) {
            out.push(format!("line `{}` has non-positive thermal limit {}", l.id, l.limit_mw));
        }
    }
    for (i, g) in f.generators.iter().enumerate() {
        if case.gen_sub[i].is_none() {
            out.push(format!("generator `{}` references unknown substation `{}`", g.id, g.sub));
        }
        if !(g.p_min <= g.p_max) {
            out.push(format!("generator `{}` has p_min {} > p_max {}", g.id, g.p_min, g.p_max));
        }
        if g.p_min < 0.0 || !g.p_max.is_finite() {
            out.push(format!("generator `{}` has invalid limits [{}, {}]", g.id, g.p_min, g.p_max));
        }
        if !(g.ramp >= 0.0) {
            out.push(format!("generator `{}` has negative ramp {}", g.id, g.ramp));
        }
    }
    for (i, l) in f.loads.iter().enumerate() {
        if case.load_sub[i].is_none() {
            out.push(format!("load `{}` references unknown substation `{}`", l.id, l.sub));
        }
    }
    out
}
