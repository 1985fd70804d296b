//! Training corpus generation: expert baseline searches, one record per
//! (step, ego agent) with the root-edge actions as weighted samples, class
//! balancing, mixture label fitting and the on-disk dataset layout.
//!
//! Dataset directory:
//!
//! * `records.jsonl`: one record per line, grid stored by reference
//! * `grids.bin`: concatenated raw semantic grids
//! * `manifest.json`: counts, class histogram, feature configuration, config echo

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, EpisodeError, Policy};
use crate::features::{build_scalars, rasterize, shift_slots, FeatureConfig, ScalarFeatures, SLOTS};
use crate::gmm::{fit_em, EmOptions, FactoredActionGmm, GmmError, WeightedSamples};
use crate::mcts::{SearchConfig, Strategy};
use crate::scene::{Action, ActionBounds, Scenario};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("dataset format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("record {id}: grid bytes {offset}..{end} outside grids.bin of {len} bytes")]
    OffsetOutOfRange { id: u64, offset: u64, end: u64, len: u64 },
    #[error("record {id}: grid of {actual} bytes, feature config expects {expected}")]
    GridSize { id: u64, actual: u64, expected: u64 },
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LonClass {
    Decelerate,
    Hold,
    Accelerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LatClass {
    Left,
    Keep,
    Right,
}

/// One of the nine {decelerate, hold, accelerate} × {left, keep, right} classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SemanticActionClass {
    pub lon: LonClass,
    pub lat: LatClass,
}

impl SemanticActionClass {
    pub const ALL: [SemanticActionClass; 9] = {
        use LatClass::*;
        use LonClass::*;
        [
            SemanticActionClass { lon: Decelerate, lat: Left },
            SemanticActionClass { lon: Decelerate, lat: Keep },
            SemanticActionClass { lon: Decelerate, lat: Right },
            SemanticActionClass { lon: Hold, lat: Left },
            SemanticActionClass { lon: Hold, lat: Keep },
            SemanticActionClass { lon: Hold, lat: Right },
            SemanticActionClass { lon: Accelerate, lat: Left },
            SemanticActionClass { lon: Accelerate, lat: Keep },
            SemanticActionClass { lon: Accelerate, lat: Right },
        ]
    };
}

impl fmt::Display for SemanticActionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lon = match self.lon {
            LonClass::Decelerate => "decelerate",
            LonClass::Hold => "hold",
            LonClass::Accelerate => "accelerate",
        };
        let lat = match self.lat {
            LatClass::Left => "left",
            LatClass::Keep => "keep",
            LatClass::Right => "right",
        };
        write!(f, "{lon}-{lat}")
    }
}

impl FromStr for SemanticActionClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        SemanticActionClass::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| format!("unknown action class {s:?}"))
    }
}

impl From<SemanticActionClass> for String {
    fn from(c: SemanticActionClass) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for SemanticActionClass {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    pub dv: f64,
    pub dy: f64,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        ClassThresholds { dv: 0.5, dy: 0.5 }
    }
}

/// Positive lateral offsets are to the left.
pub fn classify_action(a: &Action, thr: &ClassThresholds) -> SemanticActionClass {
    let lon = if a.dv_lon.abs() < thr.dv {
        LonClass::Hold
    } else if a.dv_lon > 0.0 {
        LonClass::Accelerate
    } else {
        LonClass::Decelerate
    };
    let lat = if a.dy_lat.abs() < thr.dy {
        LatClass::Keep
    } else if a.dy_lat > 0.0 {
        LatClass::Left
    } else {
        LatClass::Right
    };
    SemanticActionClass { lon, lat }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSamples {
    pub lon: WeightedSamples,
    pub lat: WeightedSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub k2: Vec<Option<FactoredActionGmm>>,
    pub k3: Vec<Option<FactoredActionGmm>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub scenario: String,
    pub run_seed: u64,
    pub timestep: usize,
    pub ego: usize,
    pub scalars: ScalarFeatures,
    /// Raw semantic grid; stored in `grids.bin` on disk.
    #[serde(skip)]
    pub grid: Vec<u8>,
    /// Root-edge actions of the agent in each slot, weighted by visit count.
    pub samples: Vec<Option<AxisSamples>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
    pub class: SemanticActionClass,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    pub runs: usize,
    pub seed: u64,
    pub thresholds: ClassThresholds,
    pub features: FeatureConfig,
    /// Overrides the scenario's iteration count when set.
    pub iterations: Option<usize>,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            runs: 85,
            seed: 0,
            thresholds: ClassThresholds::default(),
            features: FeatureConfig::default(),
            iterations: None,
        }
    }
}

impl DatagenConfig {
    fn search_config(&self, scenario: &Scenario) -> SearchConfig {
        SearchConfig {
            strategy: Strategy::Baseline,
            iterations: self.iterations.unwrap_or(scenario.search.iterations),
            ..scenario.search.clone()
        }
    }
}

/// Records from one randomized run. Every executed step yields one record per
/// agent; a run that ends in a collision keeps its records with `failed` set.
pub fn generate_run(scenario: &Scenario, seed: u64, config: &DatagenConfig) -> Result<Vec<DatasetRecord>, DatasetError> {
    let cfg = config.search_config(scenario);
    let episode = run_episode(scenario, seed, &cfg, Policy::Search(None))?;
    let failed = episode.collided;
    let mut history = Vec::new();
    let mut out = Vec::new();
    for step in &episode.steps {
        history.push(step.scene.clone());
        let result = step.search.as_ref().expect("search policy records results");
        let agents = step.scene.agent_count();
        let weights: Vec<f64> = result.root_children.iter().map(|c| c.visits as f64).collect();
        let per_agent: Vec<AxisSamples> = (0..agents)
            .map(|g| AxisSamples {
                lon: WeightedSamples {
                    values: result.root_children.iter().map(|c| c.action[g].dv_lon).collect(),
                    weights: weights.clone(),
                },
                lat: WeightedSamples {
                    values: result.root_children.iter().map(|c| c.action[g].dy_lat).collect(),
                    weights: weights.clone(),
                },
            })
            .collect();
        let t = step.scene.t;
        for ego in 0..agents {
            let scalars = shift_slots(&build_scalars(&history, ego, &config.features), t);
            let samples = scalars
                .slot_agents
                .iter()
                .map(|a| a.map(|g| per_agent[g].clone()))
                .collect();
            out.push(DatasetRecord {
                id: 0,
                scenario: scenario.name.clone(),
                run_seed: seed,
                timestep: t,
                ego,
                grid: rasterize(&step.scene, ego, &config.features).cells,
                scalars,
                samples,
                labels: None,
                class: classify_action(&step.action[ego], &config.thresholds),
                failed,
            });
        }
    }
    Ok(out)
}

/// Runs every scenario `config.runs` times (run seed `config.seed + run`)
/// and numbers the records in (scenario, run, step, ego) order.
pub fn generate(scenarios: &[Scenario], config: &DatagenConfig) -> Result<Vec<DatasetRecord>, DatasetError> {
    let jobs: Vec<(usize, u64)> = (0..scenarios.len())
        .flat_map(|s| (0..config.runs as u64).map(move |r| (s, config.seed + r)))
        .collect();
    let batches = crate::par::par_map(&jobs, |&(s, seed)| generate_run(&scenarios[s], seed, config));
    let mut out = Vec::new();
    for batch in batches {
        out.extend(batch?);
    }
    for (i, r) in out.iter_mut().enumerate() {
        r.id = i as u64;
    }
    Ok(out)
}

/// Downsamples every class to the smallest non-empty class count, keeping
/// the lowest record ids. Output is sorted by id.
pub fn balance_classes(records: &[DatasetRecord]) -> Vec<DatasetRecord> {
    let mut by_class: BTreeMap<SemanticActionClass, Vec<&DatasetRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.class).or_default().push(r);
    }
    let Some(min) = by_class.values().map(Vec::len).min() else {
        return Vec::new();
    };
    let mut out: Vec<DatasetRecord> = by_class
        .into_values()
        .flat_map(|mut v| {
            v.sort_by_key(|r| r.id);
            v.into_iter().take(min).cloned()
        })
        .collect();
    out.sort_by_key(|r| r.id);
    out
}

pub fn class_histogram(records: &[DatasetRecord]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for r in records {
        *h.entry(r.class.to_string()).or_insert(0) += 1;
    }
    h
}

/// Minimum distinct sample values per axis for a record to be labelled.
pub const MIN_DISTINCT: usize = 3;

/// Fits K=2 and K=3 mixtures per axis for every occupied slot. A record with
/// too few distinct values on any axis is rejected with the reason.
pub fn fit_labels(record: &DatasetRecord, seed: u64) -> Result<DatasetRecord, String> {
    let opts = EmOptions::default();
    let mut k2 = vec![None; SLOTS];
    let mut k3 = vec![None; SLOTS];
    for (slot, s) in record.samples.iter().enumerate() {
        let Some(s) = s else { continue };
        let fit = |w: &WeightedSamples, k: usize, axis: &str| {
            fit_em(w, k, seed, &opts).map(|f| f.gmm).map_err(|e| match e {
                GmmError::Degenerate { distinct, needed } => format!(
                    "record {}: slot {slot} {axis} has {distinct} distinct samples, need {needed}",
                    record.id
                ),
                other => format!("record {}: slot {slot} {axis}: {other}", record.id),
            })
        };
        for (axis, w) in [("lon", &s.lon), ("lat", &s.lat)] {
            if w.distinct_count() < MIN_DISTINCT {
                return Err(format!(
                    "record {}: slot {slot} {axis} has {} distinct samples, need {MIN_DISTINCT}",
                    record.id,
                    w.distinct_count()
                ));
            }
        }
        k2[slot] = Some(FactoredActionGmm {
            lon: fit(&s.lon, 2, "lon")?,
            lat: fit(&s.lat, 2, "lat")?,
        });
        k3[slot] = Some(FactoredActionGmm {
            lon: fit(&s.lon, 3, "lon")?,
            lat: fit(&s.lat, 3, "lat")?,
        });
    }
    let mut out = record.clone();
    out.labels = Some(Labels { k2, k3 });
    Ok(out)
}

/// Labels every record; returns the kept records and one reason per drop.
pub fn fit_all_labels(records: &[DatasetRecord], seed: u64) -> (Vec<DatasetRecord>, Vec<String>) {
    let fitted = crate::par::par_map(records, |r| fit_labels(r, seed));
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for f in fitted {
        match f {
            Ok(r) => kept.push(r),
            Err(reason) => dropped.push(reason),
        }
    }
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub records: usize,
    pub failed_records: usize,
    pub labelled_records: usize,
    pub class_histogram: BTreeMap<String, usize>,
    pub features: FeatureConfig,
    pub action_bounds: ActionBounds,
    pub grids_bytes: u64,
    /// Free-form echo of the generating configuration.
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    #[serde(flatten)]
    record: DatasetRecord,
    grid_offset: u64,
    grid_len: u64,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const GRIDS_FILE: &str = "grids.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the three dataset files into `dir`, creating it if needed.
pub fn write_dataset(
    dir: &Path,
    records: &[DatasetRecord],
    features: &FeatureConfig,
    action_bounds: &ActionBounds,
    config: serde_json::Value,
) -> Result<Manifest, DatasetError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rec_path = dir.join(RECORDS_FILE);
    let grid_path = dir.join(GRIDS_FILE);
    let mut rec_out = BufWriter::new(std::fs::File::create(&rec_path).map_err(io_err(&rec_path))?);
    let mut grid_out = BufWriter::new(std::fs::File::create(&grid_path).map_err(io_err(&grid_path))?);
    let mut offset = 0u64;
    for r in records {
        let line = RecordLine {
            record: r.clone(),
            grid_offset: offset,
            grid_len: r.grid.len() as u64,
        };
        serde_json::to_writer(&mut rec_out, &line).expect("record serializes");
        rec_out.write_all(b"\n").map_err(io_err(&rec_path))?;
        grid_out.write_all(&r.grid).map_err(io_err(&grid_path))?;
        offset += r.grid.len() as u64;
    }
    rec_out.flush().map_err(io_err(&rec_path))?;
    grid_out.flush().map_err(io_err(&grid_path))?;

    let manifest = Manifest {
        format_version: DATASET_VERSION,
        records: records.len(),
        failed_records: records.iter().filter(|r| r.failed).count(),
        labelled_records: records.iter().filter(|r| r.labels.is_some()).count(),
        class_histogram: class_histogram(records),
        features: *features,
        action_bounds: *action_bounds,
        grids_bytes: offset,
        config,
    };
    let man_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&man_path, text).map_err(io_err(&man_path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    // Check the version before the rest of the layout.
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != DATASET_VERSION {
        return Err(DatasetError::Version {
            found,
            expected: DATASET_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| DatasetError::Parse {
        path,
        line: 0,
        msg: e.to_string(),
    })
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<DatasetRecord>), DatasetError> {
    let manifest = read_manifest(dir)?;
    let grid_path = dir.join(GRIDS_FILE);
    let grids = std::fs::read(&grid_path).map_err(io_err(&grid_path))?;
    let rec_path = dir.join(RECORDS_FILE);
    let file = std::fs::File::open(&rec_path).map_err(io_err(&rec_path))?;
    let expected_grid = 2 * manifest.features.grid.cells_per_channel() as u64;
    let mut records = Vec::with_capacity(manifest.records);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&rec_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: rec_path.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let mut r = parsed.record;
        let end = parsed.grid_offset.saturating_add(parsed.grid_len);
        if end > grids.len() as u64 {
            return Err(DatasetError::OffsetOutOfRange {
                id: r.id,
                offset: parsed.grid_offset,
                end,
                len: grids.len() as u64,
            });
        }
        if parsed.grid_len != expected_grid {
            return Err(DatasetError::GridSize {
                id: r.id,
                actual: parsed.grid_len,
                expected: expected_grid,
            });
        }
        r.grid = grids[parsed.grid_offset as usize..end as usize].to_vec();
        records.push(r);
    }
    Ok((manifest, records))
}
