//! Scene → network input: an ego-centred two-channel semantic grid and a
//! normalized per-agent scalar history.
//!
//! Grid layout: rows are lateral cells, columns are longitudinal cells, the
//! ego centre sits on the corner shared by cells `(lon/2 - 1, lat/2 - 1)` and
//! `(lon/2, lat/2)`. Column `i` covers `[(i - lon/2)·res_lon, (i - lon/2 + 1)·res_lon)`
//! metres ahead of the ego; row `j` likewise covers the lateral offset. A cell
//! is painted when its centre lies inside an entity's footprint.

use serde::{Deserialize, Serialize};

use crate::scene::{AgentState, Scene, MAX_AGENTS};

/// Values recorded per agent and history step.
pub const VALUES_PER_STEP: usize = 7;
pub const SLOTS: usize = MAX_AGENTS;
pub const HISTORY: usize = 8;
pub const SCALAR_LEN: usize = SLOTS * HISTORY * VALUES_PER_STEP;

pub const CLASS_FREE: u8 = 0;
pub const CLASS_STATIC: u8 = 1;
pub const CLASS_DYNAMIC: u8 = 2;
pub const OBJECT_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lon_cells: usize,
    pub lat_cells: usize,
    pub lon_res: f64,
    pub lat_res: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lon_cells: 128,
            lat_cells: 256,
            lon_res: 1.0,
            lat_res: 0.1,
        }
    }
}

impl GridSpec {
    pub fn cells_per_channel(&self) -> usize {
        self.lon_cells * self.lat_cells
    }

    pub fn col_center(&self, i: usize) -> f64 {
        (i as f64 - (self.lon_cells / 2) as f64 + 0.5) * self.lon_res
    }

    pub fn row_center(&self, j: usize) -> f64 {
        (j as f64 - (self.lat_cells / 2) as f64 + 0.5) * self.lat_res
    }
}

/// Normalization constants shared by feature extraction, the dataset manifest
/// and the weights metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub grid: GridSpec,
    /// Lane classes on channel 0 are `1..=max_lanes`; `0` is non-drivable.
    pub max_lanes: usize,
    pub x_norm: f64,
    pub y_norm: f64,
    pub v_norm: f64,
    pub a_norm: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            grid: GridSpec::default(),
            max_lanes: 4,
            x_norm: 64.0,
            y_norm: 12.8,
            v_norm: 20.0,
            a_norm: 4.0,
        }
    }
}

impl FeatureConfig {
    pub fn lane_classes(&self) -> usize {
        self.max_lanes + 1
    }
}

/// Two channels of class ids, channel-major then row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticGrid {
    pub spec_lon: usize,
    pub spec_lat: usize,
    pub cells: Vec<u8>,
}

impl SemanticGrid {
    pub fn new(spec: &GridSpec) -> Self {
        SemanticGrid {
            spec_lon: spec.lon_cells,
            spec_lat: spec.lat_cells,
            cells: vec![0; 2 * spec.cells_per_channel()],
        }
    }

    #[inline]
    fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.spec_lat + row) * self.spec_lon + col
    }

    /// Class id at longitudinal column `col`, lateral row `row`.
    pub fn get(&self, channel: usize, col: usize, row: usize) -> u8 {
        self.cells[self.index(channel, row, col)]
    }

    pub fn channel(&self, channel: usize) -> &[u8] {
        let n = self.spec_lon * self.spec_lat;
        &self.cells[channel * n..(channel + 1) * n]
    }

    /// Raw export: one byte per cell, channel-major, row-major.
    pub fn to_bytes(&self) -> &[u8] {
        &self.cells
    }

    pub fn from_bytes(spec: &GridSpec, bytes: &[u8]) -> Option<Self> {
        (bytes.len() == 2 * spec.cells_per_channel()).then(|| SemanticGrid {
            spec_lon: spec.lon_cells,
            spec_lat: spec.lat_cells,
            cells: bytes.to_vec(),
        })
    }

    fn fill(&mut self, channel: usize, cols: std::ops::Range<usize>, rows: std::ops::Range<usize>, class: u8) {
        for row in rows {
            let start = self.index(channel, row, cols.start);
            let end = self.index(channel, row, cols.end);
            self.cells[start..end].fill(class);
        }
    }
}

/// Indices `i < n` whose cell centre `(i - n/2 + 0.5)·res` lies in `[lo, hi)`.
fn covered(lo: f64, hi: f64, res: f64, n: usize) -> std::ops::Range<usize> {
    let half = (n / 2) as f64;
    let center = |i: i64| (i as f64 - half + 0.5) * res;
    let first = |bound: f64| -> i64 {
        let mut i = (bound / res + half - 0.5).ceil() as i64;
        while i > i64::MIN && center(i - 1) >= bound {
            i -= 1;
        }
        while center(i) < bound {
            i += 1;
        }
        i
    };
    let start = first(lo).clamp(0, n as i64) as usize;
    let end = first(hi).clamp(0, n as i64) as usize;
    start..end.max(start)
}

/// Paints lanes (channel 0), then static and dynamic objects (channel 1) in
/// the frame of agent `ego`.
pub fn rasterize(scene: &Scene, ego: usize, cfg: &FeatureConfig) -> SemanticGrid {
    let spec = &cfg.grid;
    let mut grid = SemanticGrid::new(spec);
    let e = &scene.agents[ego];
    let all_cols = 0..spec.lon_cells;

    let mut lanes: Vec<_> = scene.lanes().to_vec();
    lanes.sort_by_key(|l| l.id);
    for lane in &lanes {
        let rows = covered(
            lane.right_edge() - e.y_lat,
            lane.left_edge() - e.y_lat,
            spec.lat_res,
            spec.lat_cells,
        );
        let class = (lane.id.min(cfg.max_lanes - 1) + 1) as u8;
        grid.fill(0, all_cols.clone(), rows, class);
    }

    let mut paint = |r: crate::scene::Rect, class: u8| {
        let cols = covered(r.x_min - e.x_lon, r.x_max - e.x_lon, spec.lon_res, spec.lon_cells);
        let rows = covered(r.y_min - e.y_lat, r.y_max - e.y_lat, spec.lat_res, spec.lat_cells);
        if !cols.is_empty() && !rows.is_empty() {
            grid.fill(1, cols, rows, class);
        }
    };
    for o in scene.obstacles() {
        paint(o.rect(), CLASS_STATIC);
    }
    for a in &scene.agents {
        paint(a.rect(), CLASS_DYNAMIC);
    }
    grid
}

/// Maps class `c` of a channel with `classes` classes to `2c/(classes-1) - 1`.
pub fn normalize_class(c: u8, classes: usize) -> f32 {
    debug_assert!(classes >= 2);
    (2.0 * c as f64 / (classes - 1) as f64 - 1.0) as f32
}

pub fn normalize_grid(grid: &SemanticGrid, lane_classes: usize) -> Vec<f32> {
    let lut0: Vec<f32> = (0..=255u8).map(|c| normalize_class(c, lane_classes).clamp(-1.0, 1.0)).collect();
    let lut1: Vec<f32> = (0..=255u8).map(|c| normalize_class(c, OBJECT_CLASSES).clamp(-1.0, 1.0)).collect();
    let n = grid.spec_lon * grid.spec_lat;
    grid.cells
        .iter()
        .enumerate()
        .map(|(i, &c)| if i < n { lut0[c as usize] } else { lut1[c as usize] })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarFeatures {
    /// `[slot][step][value]`, flattened; step 0 is the oldest.
    pub values: Vec<f32>,
    pub mask: Vec<bool>,
    /// Scene agent index occupying each slot.
    pub slot_agents: Vec<Option<usize>>,
}

impl ScalarFeatures {
    #[inline]
    pub fn offset(slot: usize, step: usize, value: usize) -> usize {
        (slot * HISTORY + step) * VALUES_PER_STEP + value
    }

    pub fn slot(&self, slot: usize) -> &[f32] {
        let n = HISTORY * VALUES_PER_STEP;
        &self.values[slot * n..(slot + 1) * n]
    }
}

fn agent_values(a: &AgentState, ego_now: &AgentState, lanes: usize, cfg: &FeatureConfig) -> [f32; VALUES_PER_STEP] {
    let lane = if lanes <= 1 {
        0.0
    } else {
        2.0 * a.lane_desired as f64 / (lanes - 1) as f64 - 1.0
    };
    let raw = [
        a.heading / std::f64::consts::PI,
        (a.x_lon - ego_now.x_lon) / cfg.x_norm,
        (a.y_lat - ego_now.y_lat) / cfg.y_norm,
        a.v / cfg.v_norm,
        a.a / cfg.a_norm,
        a.v_desired / cfg.v_norm,
        lane,
    ];
    raw.map(|v| v.clamp(-1.0, 1.0) as f32)
}

/// Scalar history of up to eight agents over the last eight scenes of
/// `history` (oldest first). Missing history is padded with the oldest scene.
pub fn build_scalars(history: &[Scene], ego: usize, cfg: &FeatureConfig) -> ScalarFeatures {
    assert!(!history.is_empty(), "at least one scene is required");
    let n = history.len().min(HISTORY);
    let recent = &history[history.len() - n..];
    let now = recent.last().expect("non-empty");
    let ego_now = &now.agents[ego];
    let lanes = now.world.lane_count();

    let mut slot_agents = vec![None; SLOTS];
    slot_agents[0] = Some(ego);
    let others = (0..now.agent_count()).filter(|&i| i != ego);
    for (slot, agent) in (1..SLOTS).zip(others) {
        slot_agents[slot] = Some(agent);
    }

    let mut values = vec![0.0f32; SCALAR_LEN];
    for (slot, agent) in slot_agents.iter().enumerate() {
        let Some(agent) = *agent else { continue };
        for step in 0..HISTORY {
            let scene = &recent[step.saturating_sub(HISTORY - n)];
            let v = agent_values(&scene.agents[agent], ego_now, lanes, cfg);
            let o = ScalarFeatures::offset(slot, step, 0);
            values[o..o + VALUES_PER_STEP].copy_from_slice(&v);
        }
    }
    let mask = slot_agents.iter().map(Option::is_some).collect();
    ScalarFeatures {
        values,
        mask,
        slot_agents,
    }
}

/// Cyclic shift of the seven non-ego slots: non-ego slot `i` receives what
/// was in non-ego slot `(i + t) mod 7`.
pub fn shift_slots(s: &ScalarFeatures, t: usize) -> ScalarFeatures {
    let others = SLOTS - 1;
    let block = HISTORY * VALUES_PER_STEP;
    let mut out = s.clone();
    for i in 0..others {
        let src = 1 + (i + t) % others;
        let dst = 1 + i;
        out.values[dst * block..(dst + 1) * block].copy_from_slice(&s.values[src * block..(src + 1) * block]);
        out.mask[dst] = s.mask[src];
        out.slot_agents[dst] = s.slot_agents[src];
    }
    out
}

/// Complete network input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub grid_spec: GridSpec,
    /// `2 × lat × lon` values in `[-1, 1]`.
    pub grid: Vec<f32>,
    pub scalars: ScalarFeatures,
}

pub fn build_features(history: &[Scene], ego: usize, cfg: &FeatureConfig) -> FeatureTensor {
    let now = history.last().expect("non-empty history");
    let grid = rasterize(now, ego, cfg);
    FeatureTensor {
        grid_spec: cfg.grid,
        grid: normalize_grid(&grid, cfg.lane_classes()),
        scalars: build_scalars(history, ego, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{LaneSpec, Obstacle, World};

    fn agent(x: f64, y: f64) -> AgentState {
        AgentState {
            x_lon: x,
            y_lat: y,
            heading: 0.0,
            v: 10.0,
            a: 0.0,
            length: 4.5,
            width: 1.8,
            v_desired: 10.0,
            lane_desired: 0,
            oncoming: false,
        }
    }

    fn world(obstacles: Vec<Obstacle>) -> World {
        World::new(
            vec![
                LaneSpec { id: 0, center_offset: 0.0, width: 3.5 },
                LaneSpec { id: 1, center_offset: 3.5, width: 3.5 },
                LaneSpec { id: 2, center_offset: 7.0, width: 3.5 },
            ],
            400.0,
            obstacles,
        )
    }

    fn painted(grid: &SemanticGrid, class: u8) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for col in 0..grid.spec_lon {
            for row in 0..grid.spec_lat {
                if grid.get(1, col, row) == class {
                    v.push((col, row));
                }
            }
        }
        v
    }

    #[test]
    fn ego_footprint_at_centre() {
        let scene = Scene::new(world(vec![]), vec![agent(100.0, 0.0)]).unwrap();
        let g = rasterize(&scene, 0, &FeatureConfig::default());
        let cells = painted(&g, CLASS_DYNAMIC);
        // 4.5 m long: centres -1.5..1.5 → cols 62..=65; 1.8 m wide: centres -0.85..0.85 → rows 119..=136.
        let expected: Vec<(usize, usize)> =
            (62..66).flat_map(|c| (119..137).map(move |r| (c, r))).collect();
        assert_eq!(cells, expected);
        assert_eq!(g.get(1, 64, 128), CLASS_DYNAMIC);
        assert_eq!(g.get(1, 63, 127), CLASS_DYNAMIC);
    }

    #[test]
    fn agent_ahead_centered_on_column_96() {
        let scene = Scene::new(world(vec![]), vec![agent(100.0, 0.0), agent(132.0, 0.0)]).unwrap();
        let g = rasterize(&scene, 0, &FeatureConfig::default());
        let cols: std::collections::BTreeSet<usize> =
            painted(&g, CLASS_DYNAMIC).into_iter().map(|(c, _)| c).filter(|&c| c > 80).collect();
        assert_eq!(cols.into_iter().collect::<Vec<_>>(), vec![94, 95, 96, 97]);
        assert_eq!(g.get(1, 96, 128), CLASS_DYNAMIC);
    }

    #[test]
    fn obstacle_outside_window_is_clipped() {
        let far = Obstacle { x_lon: 200.0, y_lat: 0.0, length: 4.0, width: 2.0 };
        let near = Obstacle { x_lon: 110.0, y_lat: 3.5, length: 4.0, width: 2.0 };
        let scene = Scene::new(world(vec![far]), vec![agent(100.0, 0.0)]).unwrap();
        let g = rasterize(&scene, 0, &FeatureConfig::default());
        assert!(painted(&g, CLASS_STATIC).is_empty());
        let scene = Scene::new(world(vec![near]), vec![agent(100.0, 0.0)]).unwrap();
        assert!(!painted(&rasterize(&scene, 0, &FeatureConfig::default()), CLASS_STATIC).is_empty());
    }

    #[test]
    fn lanes_painted_with_their_ids() {
        let scene = Scene::new(world(vec![]), vec![agent(100.0, 3.5)]).unwrap();
        let g = rasterize(&scene, 0, &FeatureConfig::default());
        // ego in lane 1: row 128 (offset 0..0.1 m) is lane 1, 3.5 m right is lane 0, 3.5 m left is lane 2
        assert_eq!(g.get(0, 10, 128), 2);
        assert_eq!(g.get(0, 10, 128 - 35), 1);
        assert_eq!(g.get(0, 10, 128 + 35), 3);
        // beyond the road edge (−1.75 − 3.5 m relative)
        assert_eq!(g.get(0, 10, 60), 0);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_class(0, 5), -1.0);
        assert_eq!(normalize_class(4, 5), 1.0);
        assert_eq!(normalize_class(1, 3), 0.0);
    }

    #[test]
    fn scalar_examples() {
        let cfg = FeatureConfig::default();
        let mut a = agent(100.0, 0.0);
        a.lane_desired = 0;
        let scene = Scene::new(world(vec![]), vec![a, agent(120.0, 3.5)]).unwrap();
        let s = build_scalars(std::slice::from_ref(&scene), 0, &cfg);
        assert_eq!(s.values.len(), SCALAR_LEN);
        let now = ScalarFeatures::offset(0, HISTORY - 1, 0);
        assert_eq!(s.values[now + 3], 0.5);
        assert_eq!(s.values[now + 6], -1.0);
        let other = ScalarFeatures::offset(1, HISTORY - 1, 0);
        assert_eq!(s.values[other + 1], (20.0f64 / 64.0) as f32);
        assert_eq!(s.mask, vec![true, true, false, false, false, false, false, false]);
        // a single scene is replicated across all steps
        for step in 0..HISTORY {
            assert_eq!(s.slot(0)[step * 7..step * 7 + 7], s.slot(0)[..7]);
        }
    }

    #[test]
    fn short_history_pads_with_oldest() {
        let cfg = FeatureConfig::default();
        let s0 = Scene::new(world(vec![]), vec![agent(100.0, 0.0)]).unwrap();
        let s1 = s0.step(&crate::scene::JointAction(vec![crate::scene::Action::new(1.0, 0.0)]), 1.0);
        let s2 = s1.step(&crate::scene::JointAction(vec![crate::scene::Action::new(1.0, 0.0)]), 1.0);
        let f = build_scalars(&[s0, s1, s2], 0, &cfg);
        let slot = f.slot(0);
        for step in 0..6 {
            assert_eq!(slot[step * 7..step * 7 + 7], slot[..7]);
        }
        assert_ne!(slot[6 * 7 + 3], slot[5 * 7 + 3]);
        assert_ne!(slot[7 * 7 + 3], slot[6 * 7 + 3]);
    }

    fn labelled(n: usize) -> ScalarFeatures {
        let mut s = ScalarFeatures {
            values: vec![0.0; SCALAR_LEN],
            mask: vec![false; SLOTS],
            slot_agents: vec![None; SLOTS],
        };
        for slot in 0..=n {
            s.values[ScalarFeatures::offset(slot, 0, 0)] = slot as f32;
            s.mask[slot] = true;
            s.slot_agents[slot] = Some(slot);
        }
        s
    }

    #[test]
    fn shift_examples() {
        let s = labelled(2);
        assert_eq!(shift_slots(&s, 0), s);
        assert_eq!(shift_slots(&s, 7), s);
        let shifted = shift_slots(&s, 1);
        assert_eq!(shifted.slot_agents[0], Some(0));
        assert_eq!(shifted.slot_agents[1], Some(2));
        // A moves to the back of the cycle.
        assert_eq!(shifted.slot_agents[7], Some(1));
        let occupied: Vec<usize> = shifted.slot_agents[1..].iter().flatten().copied().collect();
        assert_eq!(occupied, vec![2, 1]);
        assert_eq!(shifted.values[ScalarFeatures::offset(1, 0, 0)], 2.0);
        assert_eq!(shifted.mask.iter().filter(|&&m| m).count(), 3);
    }

    #[test]
    fn shift_composes_to_identity() {
        let s = labelled(5);
        for t in 0..=7 {
            assert_eq!(shift_slots(&shift_slots(&s, t), 7 - t), s);
        }
    }

    #[test]
    fn covered_matches_centre_rule() {
        for &(lo, hi) in &[(-2.25, 2.25), (-0.9, 0.9), (0.0, 1.0), (-70.0, -60.0), (3.05, 3.15)] {
            for &(res, n) in &[(1.0, 128usize), (0.1, 256)] {
                let r = covered(lo, hi, res, n);
                let brute: Vec<usize> = (0..n)
                    .filter(|&i| {
                        let c = (i as f64 - (n / 2) as f64 + 0.5) * res;
                        c >= lo && c < hi
                    })
                    .collect();
                assert_eq!(r.collect::<Vec<_>>(), brute, "{lo} {hi} {res}");
            }
        }
    }
}
