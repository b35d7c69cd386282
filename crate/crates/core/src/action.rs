use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::case::{ElementRef, GridCase};
use crate::topology::TopologyDelta;

/// Composite agent command. The empty action is the do-nothing action.
///
/// Elements in `set_busbars` are keyed as `line_or:<id>`, `line_ex:<id>`,
/// `gen:<id>` or `load:<id>`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub set_line_status: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub set_busbars: BTreeMap<String, u8>,
    /// MW change of a generator's set-point, on top of earlier redispatch.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub redispatch: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResolvedAction {
    pub delta: TopologyDelta,
    pub redispatch: Vec<(usize, f64)>,
}

impl Action {
    pub fn do_nothing() -> Self {
        Self::default()
    }

    pub fn is_do_nothing(&self) -> bool {
        self.set_line_status.is_empty() && self.set_busbars.is_empty() && self.redispatch.is_empty()
    }

    pub fn line_status(id: impl Into<String>, in_service: bool) -> Self {
        Self {
            set_line_status: BTreeMap::from([(id.into(), in_service)]),
            ..Self::default()
        }
    }

    pub fn busbars<K: Into<String>>(entries: impl IntoIterator<Item = (K, u8)>) -> Self {
        Self {
            set_busbars: entries.into_iter().map(|(k, b)| (k.into(), b)).collect(),
            ..Self::default()
        }
    }

    pub fn redispatch<K: Into<String>>(entries: impl IntoIterator<Item = (K, f64)>) -> Self {
        Self {
            redispatch: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            ..Self::default()
        }
    }

    /// Number of individual settings in the action.
    pub fn elements_touched(&self) -> usize {
        self.set_line_status.len() + self.set_busbars.len() + self.redispatch.len()
    }

    /// Maps ids to case indices; the error names the first unknown id.
    pub fn resolve(&self, case: &GridCase) -> Result<ResolvedAction, String> {
        let mut out = ResolvedAction::default();
        for (id, &status) in &self.set_line_status {
            let l = case
                .line_index(id)
                .ok_or_else(|| format!("unknown line `{id}`"))?;
            out.delta.line_status.push((l, status));
        }
        for (key, &busbar) in &self.set_busbars {
            let el: ElementRef = case
                .parse_element_key(key)
                .ok_or_else(|| format!("unknown element `{key}`"))?;
            out.delta.busbars.push((el, busbar));
        }
        for (id, &delta) in &self.redispatch {
            let g = case
                .gen_index(id)
                .ok_or_else(|| format!("unknown generator `{id}`"))?;
            out.redispatch.push((g, delta));
        }
        Ok(out)
    }
}
