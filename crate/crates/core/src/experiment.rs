//! Batch evaluation: success rates per (scenario, strategy cell, iteration
//! count) over paired randomized runs, and CSV / JSON / SVG reports.
//!
//! CSV columns, in order:
//! `scenario,strategy,components,integration,selection,iterations,runs,successes,success_rate`.
//! Empty `components` / `integration` / `selection` mean "not applicable".
//! Wall time is only reported in the JSON output so the CSV stays
//! byte-identical across reruns and thread counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, Policy};
use crate::mcts::{ActionPrior, Integration, SearchConfig, Strategy};
use crate::scene::{load_scenario, Scenario, SceneError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("scenario {path}: {source}")]
    Scenario {
        path: PathBuf,
        #[source]
        source: SceneError,
    },
    #[error("episode {scenario} seed {seed}: {msg}")]
    Episode { scenario: String, seed: u64, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStrategy {
    Baseline,
    Mdn,
    MdnStandalone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub strategy: CellStrategy,
    #[serde(default)]
    pub components: Option<usize>,
    #[serde(default)]
    pub integration: Option<Integration>,
    #[serde(default)]
    pub selection: Option<bool>,
}

impl CellSpec {
    pub fn baseline() -> Self {
        CellSpec {
            strategy: CellStrategy::Baseline,
            components: None,
            integration: None,
            selection: None,
        }
    }

    pub fn mdn(components: usize, integration: Integration, selection: bool) -> Self {
        CellSpec {
            strategy: CellStrategy::Mdn,
            components: Some(components),
            integration: Some(integration),
            selection: Some(selection),
        }
    }

    pub fn standalone(components: usize) -> Self {
        CellSpec {
            strategy: CellStrategy::MdnStandalone,
            components: Some(components),
            integration: None,
            selection: None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self.strategy {
            CellStrategy::Baseline => Ok(()),
            CellStrategy::Mdn => match (self.components, self.integration, self.selection) {
                (Some(2 | 3), Some(_), Some(_)) => Ok(()),
                _ => Err(format!("mdn cell needs components 2|3, integration and selection: {self:?}")),
            },
            CellStrategy::MdnStandalone => match self.components {
                Some(2 | 3) => Ok(()),
                _ => Err(format!("mdn-standalone cell needs components 2|3: {self:?}")),
            },
        }
    }

    /// Row label, e.g. `baseline`, `mdn-k2-root-selection`, `mdn-standalone-k3`.
    pub fn label(&self) -> String {
        match self.strategy {
            CellStrategy::Baseline => "baseline".into(),
            CellStrategy::Mdn => SearchConfig {
                strategy: Strategy::Mdn,
                components: self.components.unwrap_or(2),
                integration: self.integration.unwrap_or_default(),
                use_selection_bias: self.selection.unwrap_or(false),
                ..SearchConfig::default()
            }
            .descriptor(),
            CellStrategy::MdnStandalone => format!("mdn-standalone-k{}", self.components.unwrap_or(2)),
        }
    }

    fn search_config(&self, base: &SearchConfig, iterations: usize) -> SearchConfig {
        let mut c = SearchConfig {
            iterations: iterations.max(1),
            ..base.clone()
        };
        if self.strategy == CellStrategy::Mdn {
            c.strategy = Strategy::Mdn;
            c.components = self.components.unwrap_or(c.components);
            c.integration = self.integration.unwrap_or_default();
            c.use_selection_bias = self.selection.unwrap_or(false);
        } else {
            c.strategy = Strategy::Baseline;
        }
        c
    }
}

fn default_runs() -> usize {
    50
}

fn default_baseline_runs() -> usize {
    100
}

fn default_iterations() -> Vec<usize> {
    vec![200, 500, 1000, 2000, 4000, 8000]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Scenario files; relative paths resolve against the spec file.
    pub scenarios: Vec<PathBuf>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_baseline_runs")]
    pub baseline_runs: usize,
    #[serde(default = "default_iterations")]
    pub iterations: Vec<usize>,
    pub cells: Vec<CellSpec>,
    #[serde(default)]
    pub base_seed: u64,
    /// MDN weight files keyed by component count ("2", "3").
    #[serde(default)]
    pub weights: BTreeMap<String, PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Spec(m));
        if self.scenarios.is_empty() {
            return bad("no scenarios".into());
        }
        if self.cells.is_empty() {
            return bad("no cells".into());
        }
        if self.iterations.is_empty() || self.iterations.contains(&0) {
            return bad("iterations must be a non-empty list of positive counts".into());
        }
        if self.runs == 0 || self.baseline_runs == 0 {
            return bad("runs must be >= 1".into());
        }
        for c in &self.cells {
            c.validate().map_err(ExperimentError::Spec)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.into(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| ExperimentError::Parse {
            path: path.into(),
            msg: format!("{}: {}", e.path(), e.inner()),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in spec.scenarios.iter_mut().chain(spec.weights.values_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load_scenarios(&self) -> Result<Vec<Scenario>, ExperimentError> {
        self.scenarios
            .iter()
            .map(|p| {
                load_scenario(p).map_err(|source| ExperimentError::Scenario {
                    path: p.clone(),
                    source,
                })
            })
            .collect()
    }
}

/// Priors keyed by component count.
pub type PriorSet = BTreeMap<usize, Arc<dyn ActionPrior>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub scenario: String,
    pub strategy: String,
    pub components: Option<usize>,
    pub integration: Option<Integration>,
    pub selection: Option<bool>,
    /// 0 for the search-free standalone policy.
    pub iterations: usize,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SuccessTable {
    pub rows: Vec<SuccessRow>,
}

pub fn success_rate(successes: usize, runs: usize) -> f64 {
    successes as f64 / runs as f64
}

struct Job {
    row: usize,
    scenario: usize,
    cell: usize,
    iterations: usize,
    seed: u64,
}

/// Runs every cell on every scenario. Run `r` uses seed `base_seed + r` for
/// every cell, so cells see identical randomized initial scenes. Cells whose
/// prior is missing are skipped with a warning.
pub fn run_experiment(
    spec: &ExperimentSpec,
    scenarios: &[Scenario],
    priors: &PriorSet,
) -> Result<SuccessTable, ExperimentError> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut jobs = Vec::new();
    for (si, sc) in scenarios.iter().enumerate() {
        for (ci, cell) in spec.cells.iter().enumerate() {
            if cell.strategy != CellStrategy::Baseline {
                let k = cell.components.unwrap_or(0);
                if !priors.contains_key(&k) {
                    log::warn!("skipping cell {} on {}: no weights for K={k}", cell.label(), sc.name);
                    continue;
                }
            }
            let sweep: Vec<usize> = if cell.strategy == CellStrategy::MdnStandalone {
                vec![0]
            } else {
                spec.iterations.clone()
            };
            let runs = if cell.strategy == CellStrategy::Baseline {
                spec.baseline_runs
            } else {
                spec.runs
            };
            for n in sweep {
                let row = rows.len();
                rows.push(SuccessRow {
                    scenario: sc.name.clone(),
                    strategy: cell.label(),
                    components: cell.components,
                    integration: cell.integration,
                    selection: cell.selection,
                    iterations: n,
                    runs,
                    successes: 0,
                    success_rate: 0.0,
                    mean_wall_ms: 0.0,
                });
                for r in 0..runs as u64 {
                    jobs.push(Job {
                        row,
                        scenario: si,
                        cell: ci,
                        iterations: n,
                        seed: spec.base_seed + r,
                    });
                }
            }
        }
    }

    let outcomes = crate::par::par_map(&jobs, |job| {
        let sc = &scenarios[job.scenario];
        let cell = &spec.cells[job.cell];
        let cfg = cell.search_config(&sc.search, job.iterations);
        let prior = cell.components.and_then(|k| priors.get(&k)).map(|p| p.as_ref());
        let policy = match cell.strategy {
            CellStrategy::Baseline => Policy::Search(None),
            CellStrategy::Mdn => Policy::Search(prior),
            CellStrategy::MdnStandalone => Policy::Standalone(prior.expect("prior checked above")),
        };
        let start = Instant::now();
        let ep = run_episode(sc, job.seed, &cfg, policy).map_err(|e| ExperimentError::Episode {
            scenario: sc.name.clone(),
            seed: job.seed,
            msg: e.to_string(),
        })?;
        Ok::<_, ExperimentError>((ep.success(), start.elapsed().as_secs_f64() * 1e3))
    });

    let mut wall = vec![0.0; rows.len()];
    for (job, out) in jobs.iter().zip(outcomes) {
        let (ok, ms) = out?;
        if ok {
            rows[job.row].successes += 1;
        }
        wall[job.row] += ms;
    }
    for (row, w) in rows.iter_mut().zip(wall) {
        row.success_rate = success_rate(row.successes, row.runs);
        row.mean_wall_ms = w / row.runs as f64;
    }
    Ok(SuccessTable { rows })
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

pub const CSV_HEADER: &str = "scenario,strategy,components,integration,selection,iterations,runs,successes,success_rate";

pub fn to_csv(table: &SuccessTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        let integration = r.integration.map(|i| match i {
            Integration::Root => "root",
            Integration::All => "all",
        });
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.strategy,
            opt(&r.components),
            opt(&integration),
            opt(&r.selection),
            r.iterations,
            r.runs,
            r.successes,
            r.success_rate
        );
    }
    out
}

/// Mean success rate over scenarios per (strategy, iterations), in first-seen
/// strategy order and ascending iteration order.
pub fn aggregate(table: &SuccessTable) -> Vec<(String, Vec<(usize, f64)>)> {
    let mut order: Vec<String> = Vec::new();
    let mut acc: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        if !order.contains(&r.strategy) {
            order.push(r.strategy.clone());
        }
        let e = acc.entry((r.strategy.clone(), r.iterations)).or_insert((0.0, 0));
        e.0 += r.success_rate;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|s| {
            let pts = acc
                .iter()
                .filter(|((name, _), _)| *name == s)
                .map(|((_, n), (sum, cnt))| (*n, sum / *cnt as f64))
                .collect();
            (s, pts)
        })
        .collect()
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 360.0;
const MARGIN: f64 = 60.0;

/// SVG coordinates of a success-vs-iterations curve. Iteration counts are
/// placed on a log axis spanning `x_range`; rate 1 is at the top.
pub fn curve_points(points: &[(usize, f64)], x_range: (usize, usize)) -> Vec<(f64, f64)> {
    let (lo, hi) = (x_range.0.max(1) as f64, x_range.1.max(1) as f64);
    let span = (hi.ln() - lo.ln()).max(1e-12);
    points
        .iter()
        .map(|&(n, rate)| {
            let x = if hi > lo {
                MARGIN + (PLOT_W - 2.0 * MARGIN) * ((n.max(1) as f64).ln() - lo.ln()) / span
            } else {
                PLOT_W / 2.0
            };
            let y = PLOT_H - MARGIN - (PLOT_H - 2.0 * MARGIN) * rate.clamp(0.0, 1.0);
            (x, y)
        })
        .collect()
}

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

pub fn curves_svg(table: &SuccessTable) -> String {
    let agg = aggregate(table);
    let iters: Vec<usize> = table.rows.iter().map(|r| r.iterations).filter(|&n| n > 0).collect();
    let range = (
        iters.iter().copied().min().unwrap_or(1),
        iters.iter().copied().max().unwrap_or(1),
    );
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" font-family="sans-serif" font-size="11">"#
    );
    let (x0, x1, y0, y1) = (MARGIN, PLOT_W - MARGIN, PLOT_H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iterations</text>"#, PLOT_W / 2.0, PLOT_H - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">success rate</text>"#, PLOT_H / 2.0, PLOT_H / 2.0);
    let mut ticks = iters.clone();
    ticks.sort_unstable();
    ticks.dedup();
    for n in ticks {
        let (x, _) = curve_points(&[(n, 0.0)], range)[0];
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{n}</text>"#, y0 + 15.0);
    }
    for (i, (name, pts)) in agg.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let search_pts: Vec<(usize, f64)> = pts.iter().copied().filter(|&(n, _)| n > 0).collect();
        let coords = if search_pts.is_empty() {
            // Standalone policies do not depend on the iteration count.
            let rate = pts.first().map_or(0.0, |p| p.1);
            curve_points(&[(range.0, rate), (range.1, rate)], range)
        } else {
            curve_points(&search_pts, range)
        };
        let poly: Vec<String> = coords.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{name}</title></polyline>"#,
            poly.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{name}</text>"#,
            x1 - 150.0,
            y1 + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

fn heat_color(rate: f64) -> String {
    // Red at 0, green at 1.
    let r = rate.clamp(0.0, 1.0);
    format!("rgb({},{},80)", (220.0 * (1.0 - r)) as u8 + 30, (190.0 * r) as u8 + 30)
}

/// Heatmap for one scenario: strategies as rows, iteration counts as columns.
pub fn heatmap_svg(table: &SuccessTable, scenario: &str) -> String {
    let rows: Vec<&SuccessRow> = table.rows.iter().filter(|r| r.scenario == scenario).collect();
    let mut strategies: Vec<&str> = Vec::new();
    let mut iters: Vec<usize> = Vec::new();
    for r in &rows {
        if !strategies.contains(&r.strategy.as_str()) {
            strategies.push(&r.strategy);
        }
        if !iters.contains(&r.iterations) {
            iters.push(r.iterations);
        }
    }
    iters.sort_unstable();
    let (cw, ch, left, top) = (70.0, 26.0, 200.0, 40.0);
    let w = left + cw * iters.len() as f64 + 20.0;
    let h = top + ch * strategies.len() as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{left}" y="15">{scenario}</text>"#);
    for (j, n) in iters.iter().enumerate() {
        let label = if *n == 0 { "-".to_string() } else { n.to_string() };
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, left + cw * (j as f64 + 0.5), top - 6.0);
    }
    for (i, strat) in strategies.iter().enumerate() {
        let y = top + ch * i as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{strat}</text>"#, left - 6.0, y + ch * 0.65);
        for (j, n) in iters.iter().enumerate() {
            let Some(r) = rows.iter().find(|r| r.strategy == *strat && r.iterations == *n) else {
                continue;
            };
            let x = left + cw * j as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cw}" height="{ch}" fill="{}" stroke="white"/>"#,
                heat_color(r.success_rate)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="white">{:.2}</text>"#,
                x + cw / 2.0,
                y + ch * 0.65,
                r.success_rate
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub const CSV_FILE: &str = "results.csv";
pub const JSON_FILE: &str = "results.json";
pub const CURVES_FILE: &str = "curves.svg";

/// Writes `results.csv`, `results.json`, `curves.svg` and one
/// `heatmap_<scenario>.svg` per scenario. Returns the written paths.
pub fn report(table: &SuccessTable, out: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    std::fs::create_dir_all(out).map_err(io(out))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), ExperimentError> {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(io(&p))?;
        written.push(p);
        Ok(())
    };
    put(CSV_FILE.into(), to_csv(table))?;
    put(JSON_FILE.into(), serde_json::to_string_pretty(table).expect("table serializes"))?;
    put(CURVES_FILE.into(), curves_svg(table))?;
    let mut scenarios: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    for sc in scenarios {
        put(format!("heatmap_{}.svg", sanitize(sc)), heatmap_svg(table, sc))?;
    }
    Ok(written)
}

pub fn read_table(dir: &Path) -> Result<SuccessTable, ExperimentError> {
    let path = dir.join(JSON_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| ExperimentError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Parse {
        path,
        msg: e.to_string(),
    })
}
