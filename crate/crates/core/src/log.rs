//! Episode logs as JSON lines: a header, one record per step, and a summary.
//!
//! Records are serialized with a fixed field order and shortest round-trip
//! floats, so a replay can compare its own output to a log line by line. The
//! summary carries a SHA-256 over all preceding lines.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::Action;
use crate::config::{EnvConfig, RewardConfig};
use crate::env::{CascadeEvent, StepResult, Termination};
use crate::error::IoError;
use crate::powerflow::InjectionSet;

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format_version: u32,
    pub case_id: String,
    pub case_path: String,
    pub chronics_id: String,
    pub chronics_path: String,
    pub seed: u64,
    pub agent: String,
    pub config_hash: String,
    pub config: EnvConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: usize,
    pub action: Action,
    pub illegal_reason: Option<String>,
    pub injections: InjectionSet,
    pub rho: Vec<Option<f64>>,
    pub reward: f64,
    pub overload_timer: Vec<u32>,
    pub cascade: Vec<CascadeEvent>,
    pub termination: Termination,
}

impl StepRecord {
    pub fn new(action: &Action, result: &StepResult) -> Self {
        Self {
            t: result.observation.timestep,
            action: action.clone(),
            illegal_reason: result.info.illegal_reason.clone(),
            injections: result.observation.injections.clone(),
            rho: result.observation.rho.clone(),
            reward: result.reward,
            overload_timer: result.observation.overload_timer.clone(),
            cascade: result.info.cascade.clone(),
            termination: result.termination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSummary {
    pub steps: usize,
    pub termination: Termination,
    pub score: f64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Step(StepRecord),
    Summary(LogSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub summary: LogSummary,
}

/// Discounted return `Σ γᵗ r_t`; zero for an episode that ended in failure.
pub fn episode_score(steps: &[StepRecord], termination: Termination, cfg: &RewardConfig) -> f64 {
    if termination.is_failure() {
        return 0.0;
    }
    let mut discount = 1.0;
    let mut score = 0.0;
    for s in steps {
        score += discount * s.reward;
        discount *= cfg.gamma;
    }
    score
}

fn line(record: &LogRecord) -> String {
    serde_json::to_string(record).expect("log records serialize")
}

fn digest_lines<'a>(lines: impl Iterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl EpisodeLog {
    /// Assembles a log, computing the score and the digest.
    pub fn finish(header: LogHeader, steps: Vec<StepRecord>) -> Self {
        let termination = steps.last().map_or(Termination::None, |s| s.termination);
        let score = episode_score(&steps, termination, &header.config.reward);
        let mut summary = LogSummary {
            steps: steps.len(),
            termination,
            score,
            digest: String::new(),
        };
        let body = Self::body_lines(&header, &steps);
        summary.digest = digest_lines(body.iter().map(String::as_str));
        Self {
            header,
            steps,
            summary,
        }
    }

    fn body_lines(header: &LogHeader, steps: &[StepRecord]) -> Vec<String> {
        std::iter::once(line(&LogRecord::Header(header.clone())))
            .chain(steps.iter().map(|s| line(&LogRecord::Step(s.clone()))))
            .collect()
    }

    pub fn score(&self) -> f64 {
        self.summary.score
    }

    pub fn termination(&self) -> Termination {
        self.summary.termination
    }

    /// Serialized lines, header first, summary last.
    pub fn lines(&self) -> Vec<String> {
        let mut lines = Self::body_lines(&self.header, &self.steps);
        lines.push(line(&LogRecord::Summary(self.summary.clone())));
        lines
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.lines().join("\n");
        out.push('\n');
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let path = path.as_ref();
        let io = |source| IoError::Read {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        for (n, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let rec: LogRecord =
                serde_json::from_str(raw).map_err(|e| format!("line {}: {e}", n + 1))?;
            match rec {
                LogRecord::Header(h) if header.is_none() && n == 0 => header = Some(h),
                LogRecord::Step(s) if header.is_some() && summary.is_none() => steps.push(s),
                LogRecord::Summary(s) if header.is_some() && summary.is_none() => summary = Some(s),
                _ => return Err(format!("line {}: record out of order", n + 1)),
            }
        }
        Ok(Self {
            header: header.ok_or("missing header record")?,
            steps,
            summary: summary.ok_or("missing summary record")?,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|message| IoError::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Recomputes the digest of header and steps and compares it to the summary.
    pub fn digest_matches(&self) -> bool {
        let body = Self::body_lines(&self.header, &self.steps);
        digest_lines(body.iter().map(String::as_str)) == self.summary.digest
    }
}

/// Compares two serialized logs; returns the first differing line (0-based) and a description.
pub fn first_divergence(expected: &[String], actual: &[String]) -> Option<(usize, String)> {
    for (i, (e, a)) in expected.iter().zip(actual).enumerate() {
        if e != a {
            return Some((i, format!("expected {e}\n     got {a}")));
        }
    }
    if expected.len() != actual.len() {
        let n = expected.len().min(actual.len());
        return Some((
            n,
            format!("expected {} lines, got {}", expected.len(), actual.len()),
        ));
    }
    None
}
