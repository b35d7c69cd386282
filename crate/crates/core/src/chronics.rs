//! Time series of load and generator schedules driving an episode.
//!
//! On disk an episode is a directory holding `load_p.csv`, `gen_p.csv` (one
//! header row of element ids, one row per step) and an optional `meta.json`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::case::GridCase;
use crate::error::ChronicsError;

pub const LOAD_FILE: &str = "load_p.csv";
pub const GEN_FILE: &str = "gen_p.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChronicsMeta {
    #[serde(default = "default_step_minutes")]
    pub step_minutes: u32,
    #[serde(default = "default_start")]
    pub start: NaiveDateTime,
}

fn default_step_minutes() -> u32 {
    5
}

fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2019, 1, 7)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

impl Default for ChronicsMeta {
    fn default() -> Self {
        Self {
            step_minutes: default_step_minutes(),
            start: default_start(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chronics {
    pub name: String,
    pub meta: ChronicsMeta,
    pub load_ids: Vec<String>,
    pub gen_ids: Vec<String>,
    /// steps × loads, MW.
    pub load_p: Vec<Vec<f64>>,
    /// steps × generators, MW. The slack column is a reference schedule only.
    pub gen_p: Vec<Vec<f64>>,
}

impl Chronics {
    pub fn n_steps(&self) -> usize {
        self.load_p.len()
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        self.meta.start + Duration::minutes(i64::from(self.meta.step_minutes) * step as i64)
    }

    /// Reorders columns to the case's element order.
    pub fn bind(&self, case: &GridCase) -> Result<Chronics, ChronicsError> {
        let load_cols = bind_columns(
            "load",
            &self.load_ids,
            case.loads().iter().map(|l| l.id.as_str()),
        )?;
        let gen_cols = bind_columns(
            "generator",
            &self.gen_ids,
            case.generators().iter().map(|g| g.id.as_str()),
        )?;
        let pick = |rows: &[Vec<f64>], cols: &[usize]| -> Vec<Vec<f64>> {
            rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect()
        };
        Ok(Chronics {
            name: self.name.clone(),
            meta: self.meta.clone(),
            load_ids: case.loads().iter().map(|l| l.id.clone()).collect(),
            gen_ids: case.generators().iter().map(|g| g.id.clone()).collect(),
            load_p: pick(&self.load_p, &load_cols),
            gen_p: pick(&self.gen_p, &gen_cols),
        })
    }
}

fn bind_columns<'a>(
    class: &str,
    ids: &[String],
    expected: impl Iterator<Item = &'a str>,
) -> Result<Vec<usize>, ChronicsError> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let expected: Vec<&str> = expected.collect();
    for id in ids {
        if !expected.contains(&id.as_str()) {
            return Err(ChronicsError::Mismatch(format!("unknown {class} id `{id}`")));
        }
    }
    if index.len() != ids.len() {
        return Err(ChronicsError::Mismatch(format!("duplicate {class} column")));
    }
    expected
        .iter()
        .map(|id| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| ChronicsError::Mismatch(format!("missing {class} series `{id}`")))
        })
        .collect()
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), ChronicsError> {
    let parse_err = |message: String| ChronicsError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let invalid = |message: String| ChronicsError::Validation {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|source| ChronicsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if text.trim().is_empty() {
        return Err(parse_err("empty file".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let ids: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if ids.iter().any(String::is_empty) {
        return Err(parse_err("empty column id in header".into()));
    }

    let mut rows = Vec::new();
    for (step, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != ids.len() {
            return Err(invalid(format!(
                "row {step} has {} fields, header has {}",
                record.len(),
                ids.len()
            )));
        }
        let mut row = Vec::with_capacity(ids.len());
        for (field, id) in record.iter().zip(&ids) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("row {step} column `{id}`: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(invalid(format!("row {step} column `{id}`: non-finite value {field}")));
            }
            if v < 0.0 {
                return Err(invalid(format!("row {step} column `{id}`: negative value {v}")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid("no data rows".into()));
    }
    Ok((ids, rows))
}

pub fn load_chronics(dir: impl AsRef<Path>) -> Result<Chronics, ChronicsError> {
    let dir = dir.as_ref();
    let (load_ids, load_p) = read_matrix(&dir.join(LOAD_FILE))?;
    let (gen_ids, gen_p) = read_matrix(&dir.join(GEN_FILE))?;
    if load_p.len() != gen_p.len() {
        return Err(ChronicsError::Validation {
            path: dir.to_path_buf(),
            message: format!(
                "{LOAD_FILE} has {} steps but {GEN_FILE} has {}",
                load_p.len(),
                gen_p.len()
            ),
        });
    }
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|source| ChronicsError::Io {
            path: meta_path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ChronicsError::Parse {
            path: meta_path,
            message: e.to_string(),
        })?
    } else {
        ChronicsMeta::default()
    };
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Chronics {
        name,
        meta,
        load_ids,
        gen_ids,
        load_p,
        gen_p,
    })
}

fn write_matrix(path: &Path, ids: &[String], rows: &[Vec<f64>]) -> Result<(), ChronicsError> {
    let mut out = ids.join(",");
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| ChronicsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_chronics(dir: impl AsRef<Path>, chronics: &Chronics) -> Result<PathBuf, ChronicsError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| ChronicsError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_matrix(&dir.join(LOAD_FILE), &chronics.load_ids, &chronics.load_p)?;
    write_matrix(&dir.join(GEN_FILE), &chronics.gen_ids, &chronics.gen_p)?;
    let meta = serde_json::to_string_pretty(&chronics.meta).expect("meta serializes");
    fs::write(dir.join(META_FILE), meta + "\n").map_err(|source| ChronicsError::Io {
        path: dir.join(META_FILE),
        source,
    })?;
    Ok(dir.to_path_buf())
}

/// Shape parameters for synthetic daily profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthProfile {
    /// Peak total demand as a fraction of total generation capacity.
    pub peak_fraction: f64,
    /// Relative amplitude of the per-step multiplicative noise.
    pub noise: f64,
    pub step_minutes: u32,
    pub start: NaiveDateTime,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            peak_fraction: 0.4,
            noise: 0.02,
            step_minutes: 5,
            start: default_start(),
        }
    }
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    // Wrapped around midnight.
    let d = (hour - center + 12.0).rem_euclid(24.0) - 12.0;
    (-0.5 * (d / width).powi(2)).exp()
}

/// Normalized diurnal demand with a morning shoulder and an evening peak near 18:00.
pub fn diurnal_shape(hour: f64) -> f64 {
    static PEAK: OnceLock<f64> = OnceLock::new();
    let raw = |h: f64| {
        0.55 + 0.25 * bump(h, 8.0, 1.8) + 0.45 * bump(h, 18.0, 2.0)
            - 0.05 * (2.0 * PI * h / 24.0).cos().max(0.0)
    };
    let peak = *PEAK.get_or_init(|| (0..24 * 60).map(|m| raw(m as f64 / 60.0)).fold(0.0, f64::max));
    raw(hour) / peak
}

/// Splits `total` across generators proportionally to `p_max`, honoring `[p_min, p_max]`.
pub fn proportional_dispatch(case: &GridCase, total: f64) -> Option<Vec<f64>> {
    let gens = case.generators();
    let p_min: f64 = gens.iter().map(|g| g.p_min).sum();
    let p_max: f64 = gens.iter().map(|g| g.p_max).sum();
    if total > p_max + 1e-9 || total < p_min - 1e-9 {
        return None;
    }
    let mut out = vec![0.0; gens.len()];
    let mut free: Vec<usize> = (0..gens.len()).collect();
    let mut remaining = total;
    loop {
        let weight: f64 = free.iter().map(|&g| gens[g].p_max).sum();
        let mut clamped = Vec::new();
        for &g in &free {
            let share = if weight > 0.0 {
                remaining * gens[g].p_max / weight
            } else {
                0.0
            };
            out[g] = share;
            if share < gens[g].p_min {
                clamped.push((g, gens[g].p_min));
            } else if share > gens[g].p_max {
                clamped.push((g, gens[g].p_max));
            }
        }
        if clamped.is_empty() {
            return Some(out);
        }
        for (g, v) in clamped {
            out[g] = v;
            remaining -= v;
            free.retain(|&f| f != g);
        }
        if free.is_empty() {
            return Some(out);
        }
    }
}

pub fn synthesize_chronics(
    case: &GridCase,
    steps: usize,
    seed: u64,
    profile: &SynthProfile,
) -> Result<Chronics, ChronicsError> {
    assert!(steps >= 1, "at least one step");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity: f64 = case.generators().iter().map(|g| g.p_max).sum();
    let weights: Vec<f64> = (0..case.n_loads()).map(|_| rng.random_range(0.5..1.5)).collect();
    let weight_sum: f64 = weights.iter().sum();

    let mut load_p = Vec::with_capacity(steps);
    let mut gen_p = Vec::with_capacity(steps);
    for step in 0..steps {
        let minutes = i64::from(profile.step_minutes) * step as i64;
        let t = profile.start + Duration::minutes(minutes);
        let hour = f64::from(t.time().num_seconds_from_midnight()) / 3600.0;
        let total = profile.peak_fraction * capacity * diurnal_shape(hour);
        let row: Vec<f64> = weights
            .iter()
            .map(|w| {
                let jitter = 1.0 + profile.noise * rng.random_range(-1.0..1.0);
                (total * w / weight_sum * jitter).max(0.0)
            })
            .collect();
        let demand: f64 = row.iter().sum();
        let dispatch = proportional_dispatch(case, demand).ok_or(ChronicsError::InfeasibleProfile {
            step,
            demand_mw: demand,
            capacity_mw: capacity,
        })?;
        load_p.push(row);
        gen_p.push(dispatch);
    }
    Ok(Chronics {
        name: format!("synthetic_{seed}"),
        meta: ChronicsMeta {
            step_minutes: profile.step_minutes,
            start: profile.start,
        },
        load_ids: case.loads().iter().map(|l| l.id.clone()).collect(),
        gen_ids: case.generators().iter().map(|g| g.id.clone()).collect(),
        load_p,
        gen_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::fixtures::triangle;
    use crate::case::{CaseFile, GridCase};
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn reads_directory_with_meta() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), LOAD_FILE, "lB\n90\n80.5\n");
        write(dir.path(), GEN_FILE, "gA\n90\n80.5\n");
        write(dir.path(), META_FILE, r#"{"step_minutes": 15, "start": "2020-03-01T06:00:00"}"#);
        let c = load_chronics(dir.path()).unwrap();
        assert_eq!(c.n_steps(), 2);
        assert_eq!(c.load_p, vec![vec![90.0], vec![80.5]]);
        assert_eq!(c.timestamp(2).to_string(), "2020-03-01 06:30:00");
    }

    #[test]
    fn negative_value_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), LOAD_FILE, "l1,l2\n1,2\n3,-4\n");
        write(dir.path(), GEN_FILE, "g\n3\n7\n");
        let err = load_chronics(dir.path()).unwrap_err();
        match err {
            ChronicsError::Validation { message, .. } => {
                assert!(message.contains("row 1") && message.contains("`l2`"), "{message}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), LOAD_FILE, "");
        write(dir.path(), GEN_FILE, "g\n1\n");
        assert!(matches!(load_chronics(dir.path()), Err(ChronicsError::Parse { .. })));
    }

    #[test]
    fn ragged_and_nan_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), GEN_FILE, "g\n1\n1\n");
        write(dir.path(), LOAD_FILE, "a,b\n1,2\n3\n");
        assert!(matches!(load_chronics(dir.path()), Err(ChronicsError::Validation { .. })));
        write(dir.path(), LOAD_FILE, "a,b\n1,2\n3,NaN\n");
        assert!(matches!(load_chronics(dir.path()), Err(ChronicsError::Validation { .. })));
        write(dir.path(), LOAD_FILE, "a,b\n1,2\n3,x\n");
        assert!(matches!(load_chronics(dir.path()), Err(ChronicsError::Parse { .. })));
    }

    #[test]
    fn bind_reorders_and_rejects_unknown_ids() {
        let case = triangle([100.0; 3]);
        let mut c = synthesize_chronics(&case, 3, 1, &SynthProfile::default()).unwrap();
        assert_eq!(c.bind(&case).unwrap(), c);
        c.load_ids = vec!["nope".into()];
        assert!(matches!(c.bind(&case), Err(ChronicsError::Mismatch(m)) if m.contains("nope")));
    }

    #[test]
    fn synthesis_is_deterministic_and_balanced() {
        let case = triangle([100.0; 3]);
        let p = SynthProfile::default();
        let a = synthesize_chronics(&case, 288, 7, &p).unwrap();
        let b = synthesize_chronics(&case, 288, 7, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synthesize_chronics(&case, 288, 8, &p).unwrap());
        for (l, g) in a.load_p.iter().zip(&a.gen_p) {
            let d: f64 = l.iter().sum();
            let s: f64 = g.iter().sum();
            assert!((d - s).abs() < 1e-9);
        }
        let one = synthesize_chronics(&case, 1, 7, &p).unwrap();
        assert_eq!(one.n_steps(), 1);
        assert_eq!(one.gen_p[0].len(), 1);
    }

    #[test]
    fn demand_beyond_capacity_is_infeasible() {
        let case = triangle([100.0; 3]);
        let p = SynthProfile {
            peak_fraction: 1.5,
            ..SynthProfile::default()
        };
        assert!(matches!(
            synthesize_chronics(&case, 288, 0, &p),
            Err(ChronicsError::InfeasibleProfile { .. })
        ));
    }

    #[test]
    fn evening_peak_is_the_daily_maximum() {
        let argmax = (0..24 * 12)
            .map(|i| i as f64 / 12.0)
            .max_by(|a, b| diurnal_shape(*a).total_cmp(&diurnal_shape(*b)))
            .unwrap();
        assert!((17.0..=19.0).contains(&argmax), "{argmax}");
        assert!((diurnal_shape(argmax) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dispatch_respects_minimums() {
        let mut file: CaseFile = triangle([100.0; 3]).file().clone();
        file.generators.push(crate::case::fixtures::gen("g2", "C", 100.0, false));
        file.generators[1].p_min = 40.0;
        let case = GridCase::from(file);
        let d = proportional_dispatch(&case, 60.0).unwrap();
        assert_eq!(d[1], 40.0);
        assert!((d[0] - 20.0).abs() < 1e-12);
        assert!(proportional_dispatch(&case, 10.0).is_none());
    }

    proptest! {
        #[test]
        fn write_then_load_round_trips(seed in 0u64..1000, steps in 1usize..40) {
            let case = triangle([100.0; 3]);
            let c = synthesize_chronics(&case, steps, seed, &SynthProfile::default()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(&c.name);
            write_chronics(&path, &c).unwrap();
            let back = load_chronics(&path).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
