//! World model: straight multi-lane road in road-aligned coordinates, agent
//! kinematics, collision checking and the cooperative reward.
//!
//! `x` runs along the road reference line, `y` is the lateral offset (positive
//! to the left). Lanes are lateral bands that extend along the whole road.

pub mod randomize;
pub mod scenario;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use randomize::{randomize_scenario, AgentRanges, ObstacleRanges, RandomizationRanges, Range};
pub use scenario::{load_scenario, save_scenario, EndCondition, Scenario, ScenarioFile};

/// Upper bound on the number of cooperating agents in one scene.
pub const MAX_AGENTS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("randomization unsatisfiable after {attempts} attempts: {last}")]
    UnsatisfiableRandomization { attempts: usize, last: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SceneError {
    pub(crate) fn invalid(path: impl Into<String>, msg: impl Into<String>) -> Self {
        SceneError::Invalid {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub id: usize,
    #[serde(rename = "center_offset_m")]
    pub center_offset: f64,
    #[serde(rename = "width_m")]
    pub width: f64,
}

impl LaneSpec {
    pub fn left_edge(&self) -> f64 {
        self.center_offset + 0.5 * self.width
    }

    pub fn right_edge(&self) -> f64 {
        self.center_offset - 0.5 * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    #[serde(rename = "x")]
    pub x_lon: f64,
    #[serde(rename = "y")]
    pub y_lat: f64,
    pub heading: f64,
    pub v: f64,
    #[serde(default)]
    pub a: f64,
    pub length: f64,
    pub width: f64,
    pub v_desired: f64,
    pub lane_desired: usize,
    /// Drives towards decreasing `x` (oncoming traffic).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oncoming: bool,
}

impl AgentState {
    pub fn rect(&self) -> Rect {
        Rect::centered(self.x_lon, self.y_lat, self.length, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(rename = "x")]
    pub x_lon: f64,
    #[serde(rename = "y")]
    pub y_lat: f64,
    pub length: f64,
    pub width: f64,
}

impl Obstacle {
    pub fn rect(&self) -> Rect {
        Rect::centered(self.x_lon, self.y_lat, self.length, self.width)
    }
}

/// Road-frame axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn centered(x: f64, y: f64, length: f64, width: f64) -> Self {
        Rect {
            x_min: x - 0.5 * length,
            x_max: x + 0.5 * length,
            y_min: y - 0.5 * width,
            y_max: y + 0.5 * width,
        }
    }

    /// Open-interior intersection; touching edges do not count.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dv_lon: f64,
    pub dy_lat: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        dv_lon: 0.0,
        dy_lat: 0.0,
    };

    pub fn new(dv_lon: f64, dy_lat: f64) -> Self {
        Action { dv_lon, dy_lat }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub dv_min: f64,
    pub dv_max: f64,
    pub dy_min: f64,
    pub dy_max: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        ActionBounds {
            dv_min: -5.0,
            dv_max: 5.0,
            dy_min: -3.5,
            dy_max: 3.5,
        }
    }
}

impl ActionBounds {
    pub fn contains(&self, a: &Action) -> bool {
        a.dv_lon >= self.dv_min
            && a.dv_lon <= self.dv_max
            && a.dy_lat >= self.dy_min
            && a.dy_lat <= self.dy_max
    }

    pub fn midpoint(&self) -> Action {
        Action::new(
            0.5 * (self.dv_min + self.dv_max),
            0.5 * (self.dy_min + self.dy_max),
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok(self.dv_min, self.dv_max) || !ok(self.dy_min, self.dy_max) {
            return Err(format!("degenerate action bounds {self:?}"));
        }
        Ok(())
    }
}

/// One action per agent, ordered by agent index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointAction(pub Vec<Action>);

impl JointAction {
    pub fn zeros(agents: usize) -> Self {
        JointAction(vec![Action::ZERO; agents])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Action> {
        self.0.iter()
    }
}

impl std::ops::Index<usize> for JointAction {
    type Output = Action;
    fn index(&self, i: usize) -> &Action {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_v: f64,
    pub w_l: f64,
    pub w_a: f64,
    pub collision_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_v: 1.0,
            w_l: 0.5,
            w_a: 0.2,
            collision_penalty: -1000.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w_v >= 0.0 && self.w_l >= 0.0 && self.w_a >= 0.0) {
            return Err("reward weights must be non-negative".into());
        }
        if !(self.collision_penalty < 0.0) {
            return Err("collision_penalty must be strictly negative".into());
        }
        Ok(())
    }
}

/// Static part of a scene, shared between all snapshots of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub lanes: Vec<LaneSpec>,
    pub road_length: f64,
    pub obstacles: Vec<Obstacle>,
    /// Merged lateral intervals of the drivable area, ascending.
    drivable: Vec<(f64, f64)>,
}

impl World {
    pub fn new(lanes: Vec<LaneSpec>, road_length: f64, obstacles: Vec<Obstacle>) -> Self {
        let drivable = merge_lanes(&lanes);
        World {
            lanes,
            road_length,
            obstacles,
            drivable,
        }
    }

    pub fn lane(&self, id: usize) -> Option<&LaneSpec> {
        self.lanes.iter().find(|l| l.id == id)
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    /// True iff the lateral band `[y_min, y_max]` lies inside one drivable stretch.
    pub fn on_road(&self, y_min: f64, y_max: f64) -> bool {
        self.drivable
            .iter()
            .any(|&(lo, hi)| y_min >= lo - 1e-9 && y_max <= hi + 1e-9)
    }

    pub fn lateral_extent(&self) -> (f64, f64) {
        match (self.drivable.first(), self.drivable.last()) {
            (Some(a), Some(b)) => (a.0, b.1),
            _ => (0.0, 0.0),
        }
    }
}

fn merge_lanes(lanes: &[LaneSpec]) -> Vec<(f64, f64)> {
    let mut bands: Vec<(f64, f64)> = lanes.iter().map(|l| (l.right_edge(), l.left_edge())).collect();
    bands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(bands.len());
    for (lo, hi) in bands {
        match merged.last_mut() {
            Some(last) if lo <= last.1 + 1e-9 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

/// Immutable joint world state at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub world: Arc<World>,
    pub agents: Vec<AgentState>,
    pub t: usize,
    /// Agent states before the last step, used for swept collision checks.
    pub prev_agents: Option<Vec<AgentState>>,
}

impl Scene {
    pub fn new(world: World, agents: Vec<AgentState>) -> Result<Self, SceneError> {
        let scene = Scene {
            world: Arc::new(world),
            agents,
            t: 0,
            prev_agents: None,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn lanes(&self) -> &[LaneSpec] {
        &self.world.lanes
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.world.obstacles
    }

    pub fn road_length(&self) -> f64 {
        self.world.road_length
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Checks every construction invariant, reporting the first violation with its field path.
    pub fn validate(&self) -> Result<(), SceneError> {
        let w = &self.world;
        if w.lanes.is_empty() {
            return Err(SceneError::invalid("road.lanes", "at least one lane is required"));
        }
        if !(w.road_length > 0.0) {
            return Err(SceneError::invalid("road.length_m", "must be > 0"));
        }
        for (i, lane) in w.lanes.iter().enumerate() {
            if !(lane.width > 0.0) {
                return Err(SceneError::invalid(format!("road.lanes[{i}].width_m"), "must be > 0"));
            }
            if lane.id >= w.lanes.len() {
                return Err(SceneError::invalid(
                    format!("road.lanes[{i}].id"),
                    format!("lane ids must be 0..{}", w.lanes.len()),
                ));
            }
            if w.lanes[..i].iter().any(|l| l.id == lane.id) {
                return Err(SceneError::invalid(
                    format!("road.lanes[{i}].id"),
                    format!("duplicate lane id {}", lane.id),
                ));
            }
        }
        let mut sorted: Vec<&LaneSpec> = w.lanes.iter().collect();
        sorted.sort_by(|a, b| a.center_offset.total_cmp(&b.center_offset));
        for pair in sorted.windows(2) {
            if pair[0].left_edge() > pair[1].right_edge() + 1e-9 {
                return Err(SceneError::invalid(
                    "road.lanes",
                    format!("lanes {} and {} overlap", pair[0].id, pair[1].id),
                ));
            }
        }
        let g = self.agents.len();
        if g == 0 || g > MAX_AGENTS {
            return Err(SceneError::invalid(
                "agents",
                format!("agent count must be in 1..={MAX_AGENTS}, got {g}"),
            ));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let p = |f: &str| format!("agents[{i}].{f}");
            let finite = [a.x_lon, a.y_lat, a.heading, a.v, a.a, a.length, a.width, a.v_desired]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(SceneError::invalid(format!("agents[{i}]"), "non-finite value"));
            }
            if !(a.v >= 0.0) {
                return Err(SceneError::invalid(p("v"), "must be >= 0"));
            }
            if !(a.v_desired >= 0.0) {
                return Err(SceneError::invalid(p("v_desired"), "must be >= 0"));
            }
            if !(a.length > 0.0) {
                return Err(SceneError::invalid(p("length"), "must be > 0"));
            }
            if !(a.width > 0.0) {
                return Err(SceneError::invalid(p("width"), "must be > 0"));
            }
            if !(a.heading > -std::f64::consts::PI && a.heading <= std::f64::consts::PI) {
                return Err(SceneError::invalid(p("heading"), "must be in (-pi, pi]"));
            }
            if w.lane(a.lane_desired).is_none() {
                return Err(SceneError::invalid(
                    p("lane_desired"),
                    format!("lane {} does not exist", a.lane_desired),
                ));
            }
            let r = a.rect();
            if !w.on_road(r.y_min, r.y_max) || a.x_lon < 0.0 || a.x_lon > w.road_length {
                return Err(SceneError::invalid(format!("agents[{i}]"), "outside road bounds"));
            }
        }
        for (i, o) in w.obstacles.iter().enumerate() {
            if !(o.length > 0.0 && o.width > 0.0) {
                return Err(SceneError::invalid(
                    format!("obstacles[{i}]"),
                    "dimensions must be > 0",
                ));
            }
        }
        Ok(())
    }

    /// Applies a joint action to every agent and returns the successor snapshot.
    pub fn step(&self, action: &JointAction, dt: f64) -> Scene {
        debug_assert_eq!(action.len(), self.agents.len());
        let agents = self
            .agents
            .iter()
            .zip(action.iter())
            .map(|(s, a)| step_kinematics(s, a, dt))
            .collect();
        Scene {
            world: Arc::clone(&self.world),
            agents,
            t: self.t + 1,
            prev_agents: Some(self.agents.clone()),
        }
    }
}

/// Trapezoidal longitudinal integration with the speed clamped at zero; the
/// lateral offset is applied directly.
pub fn step_kinematics(state: &AgentState, action: &Action, dt: f64) -> AgentState {
    debug_assert!(dt > 0.0);
    let v_next = (state.v + action.dv_lon).max(0.0);
    let dir = if state.oncoming { -1.0 } else { 1.0 };
    // -0.0 for a stopped oncoming agent keeps atan2 at pi.
    let advance = dir * (0.5 * (state.v + v_next) * dt);
    AgentState {
        x_lon: state.x_lon + advance,
        y_lat: state.y_lat + action.dy_lat,
        heading: action.dy_lat.atan2(advance),
        v: v_next,
        a: action.dv_lon / dt,
        ..*state
    }
}

/// Position at fraction `s` of the last step: constant acceleration along the
/// road, linear interpolation laterally.
fn interpolate(prev: &AgentState, next: &AgentState, s: f64) -> (f64, f64) {
    let mean = 0.5 * (prev.v + next.v);
    let frac = if mean > 0.0 {
        (prev.v * s + 0.5 * (next.v - prev.v) * s * s) / mean
    } else {
        s
    };
    (
        prev.x_lon + (next.x_lon - prev.x_lon) * frac,
        prev.y_lat + (next.y_lat - prev.y_lat) * s,
    )
}

/// Swept collision check over `substeps` samples of the last step.
///
/// Writes one flag per agent into `out` and returns whether any flag is set.
pub fn collisions_into(
    world: &World,
    prev: Option<&[AgentState]>,
    next: &[AgentState],
    substeps: usize,
    out: &mut [bool],
) -> bool {
    debug_assert_eq!(out.len(), next.len());
    out.iter_mut().for_each(|f| *f = false);
    let samples = if prev.is_some() { substeps.max(1) } else { 1 };
    let mut rects = [Rect::centered(0.0, 0.0, 0.0, 0.0); MAX_AGENTS];
    let g = next.len();
    for k in 1..=samples {
        let s = k as f64 / samples as f64;
        for i in 0..g {
            let (x, y) = match prev {
                Some(p) => interpolate(&p[i], &next[i], s),
                None => (next[i].x_lon, next[i].y_lat),
            };
            rects[i] = Rect::centered(x, y, next[i].length, next[i].width);
        }
        for i in 0..g {
            let r = &rects[i];
            if !world.on_road(r.y_min, r.y_max) {
                out[i] = true;
            }
            if world.obstacles.iter().any(|o| o.rect().intersects(r)) {
                out[i] = true;
            }
            for j in (i + 1)..g {
                if r.intersects(&rects[j]) {
                    out[i] = true;
                    out[j] = true;
                }
            }
        }
    }
    out.iter().any(|&c| c)
}

/// Per-agent collision flags for the last step of `scene`.
pub fn check_collision(scene: &Scene, substeps: usize) -> Vec<bool> {
    let mut out = vec![false; scene.agents.len()];
    collisions_into(
        &scene.world,
        scene.prev_agents.as_deref(),
        &scene.agents,
        substeps,
        &mut out,
    );
    out
}

/// Single-agent step reward; the cooperative reward is the sum over agents.
pub fn step_reward(
    _prev: &AgentState,
    next: &AgentState,
    action: &Action,
    collided: bool,
    w: &RewardWeights,
    world: &World,
) -> f64 {
    let lane_center = world
        .lane(next.lane_desired)
        .map(|l| l.center_offset)
        .unwrap_or(next.y_lat);
    let mut r = -w.w_v * (next.v - next.v_desired).abs()
        - w.w_l * (next.y_lat - lane_center).abs()
        - w.w_a * (action.dv_lon.abs() + action.dy_lat.abs());
    if collided {
        r += w.collision_penalty;
    }
    r
}

/// Outcome of applying one joint action: successor, per-agent rewards and collision flags.
#[derive(Debug, Clone)]
pub struct Transition {
    pub next: Scene,
    pub rewards: Vec<f64>,
    pub collided: Vec<bool>,
}

impl Transition {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn any_collision(&self) -> bool {
        self.collided.iter().any(|&c| c)
    }
}

pub fn transition(
    scene: &Scene,
    action: &JointAction,
    dt: f64,
    substeps: usize,
    w: &RewardWeights,
) -> Transition {
    let next = scene.step(action, dt);
    let collided = check_collision(&next, substeps);
    let rewards = scene
        .agents
        .iter()
        .zip(&next.agents)
        .zip(action.iter())
        .zip(&collided)
        .map(|(((p, n), a), &c)| step_reward(p, n, a, c, w, &scene.world))
        .collect();
    Transition {
        next,
        rewards,
        collided,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    HorizonReached,
    Invalid,
}

#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub scene: Scene,
    pub action: JointAction,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub terminal: Option<Terminal>,
}

impl Trajectory {
    pub fn concat(mut self, other: Trajectory) -> Trajectory {
        self.steps.extend(other.steps);
        self.terminal = other.terminal;
        self
    }
}

/// Cooperative return: the sum over steps of the sum of per-agent rewards.
pub fn trajectory_return(traj: &Trajectory) -> f64 {
    traj.steps
        .iter()
        .map(|s| s.rewards.iter().sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn agent(x: f64, y: f64, v: f64) -> AgentState {
        AgentState {
            x_lon: x,
            y_lat: y,
            heading: 0.0,
            v,
            a: 0.0,
            length: 4.5,
            width: 1.8,
            v_desired: v,
            lane_desired: 0,
            oncoming: false,
        }
    }

    fn two_lane_world() -> World {
        World::new(
            vec![
                LaneSpec { id: 0, center_offset: 0.0, width: 3.5 },
                LaneSpec { id: 1, center_offset: 3.5, width: 3.5 },
            ],
            200.0,
            vec![],
        )
    }

    #[test]
    fn kinematics_examples() {
        let s = step_kinematics(&agent(0.0, 0.0, 10.0), &Action::new(2.0, 0.0), 1.0);
        assert_abs_diff_eq!(s.x_lon, 11.0);
        assert_abs_diff_eq!(s.v, 12.0);
        assert_abs_diff_eq!(s.a, 2.0);

        let s = step_kinematics(&agent(0.0, 0.0, 1.0), &Action::new(-5.0, 0.0), 1.0);
        assert_eq!(s.v, 0.0);
        assert_abs_diff_eq!(s.x_lon, 0.5);

        let s = step_kinematics(&agent(0.0, 0.0, 10.0), &Action::new(0.0, 3.5), 1.0);
        assert_abs_diff_eq!(s.y_lat, 3.5);
        assert_abs_diff_eq!(s.x_lon, 10.0);
        assert_abs_diff_eq!(s.heading, 3.5f64.atan2(10.0));
    }

    #[test]
    fn oncoming_agents_move_backwards() {
        let mut a = agent(50.0, 0.0, 10.0);
        a.oncoming = true;
        a.heading = std::f64::consts::PI;
        let s = step_kinematics(&a, &Action::ZERO, 1.0);
        assert_abs_diff_eq!(s.x_lon, 40.0);
        assert_abs_diff_eq!(s.heading, std::f64::consts::PI);
        let stopped = step_kinematics(&AgentState { v: 0.0, ..a }, &Action::ZERO, 1.0);
        assert_abs_diff_eq!(stopped.heading, std::f64::consts::PI);
    }

    #[test]
    fn collision_examples() {
        let world = two_lane_world();
        let same_pose =
            Scene::new(world.clone(), vec![agent(10.0, 0.0, 5.0), agent(10.0, 0.0, 5.0)]).unwrap();
        assert_eq!(check_collision(&same_pose, 10), vec![true, true]);

        let single = Scene::new(world.clone(), vec![agent(10.0, 0.0, 5.0)]).unwrap();
        assert_eq!(check_collision(&single, 10), vec![false]);

        let off = Scene {
            world: Arc::new(world),
            agents: vec![agent(10.0, 6.0, 5.0)],
            t: 0,
            prev_agents: None,
        };
        assert_eq!(check_collision(&off, 10), vec![true]);
    }

    #[test]
    fn swept_check_catches_pass_through() {
        // Agent 1 is 8 m ahead and stopped; agent 0 jumps from behind to beyond it in one step.
        let world = two_lane_world();
        let scene = Scene::new(world, vec![agent(10.0, 0.0, 20.0), agent(25.0, 0.0, 0.0)]).unwrap();
        let next = scene.step(&JointAction(vec![Action::new(0.0, 0.0), Action::ZERO]), 1.0);
        assert!(next.agents[0].x_lon > next.agents[1].x_lon + 4.5);
        assert_eq!(check_collision(&next, 1), vec![false, false]);
        assert_eq!(check_collision(&next, 10), vec![true, true]);
    }

    #[test]
    fn obstacle_collision() {
        let mut world = two_lane_world();
        world.obstacles.push(Obstacle { x_lon: 20.0, y_lat: 0.0, length: 2.0, width: 2.0 });
        let scene = Scene::new(world, vec![agent(10.0, 0.0, 10.0)]).unwrap();
        let next = scene.step(&JointAction::zeros(1), 1.0);
        assert_eq!(check_collision(&next, 10), vec![true]);
        assert_eq!(check_collision(&scene, 10), vec![false]);
    }

    #[test]
    fn reward_examples() {
        let world = two_lane_world();
        let w = RewardWeights::default();
        let a = agent(0.0, 0.0, 10.0);
        assert_eq!(step_reward(&a, &a, &Action::ZERO, false, &w, &world), 0.0);

        let next = AgentState { v: 12.0, y_lat: 1.0, v_desired: 10.0, ..a };
        let act = Action::new(1.0, 0.5);
        // -1*2 - 0.5*1 - 0.2*1.5
        assert_abs_diff_eq!(step_reward(&a, &next, &act, false, &w, &world), -2.8, epsilon = 1e-12);
        assert_abs_diff_eq!(step_reward(&a, &next, &act, true, &w, &world), -1002.8, epsilon = 1e-12);
        let half = RewardWeights { w_v: 0.5, ..w };
        assert_abs_diff_eq!(step_reward(&a, &next, &act, false, &half, &world), -1.8, epsilon = 1e-12);
    }

    fn step_with(rewards: Vec<f64>) -> TrajectoryStep {
        let world = two_lane_world();
        let g = rewards.len();
        TrajectoryStep {
            scene: Scene::new(world, (0..g).map(|i| agent(10.0 * i as f64, 0.0, 1.0)).collect()).unwrap(),
            action: JointAction::zeros(g),
            rewards,
        }
    }

    #[test]
    fn return_examples() {
        assert_eq!(trajectory_return(&Trajectory::default()), 0.0);
        let t = Trajectory {
            steps: vec![step_with(vec![-1.0]), step_with(vec![-2.0]), step_with(vec![0.5])],
            terminal: Some(Terminal::HorizonReached),
        };
        assert_abs_diff_eq!(trajectory_return(&t), -2.5);
        let t2 = Trajectory { steps: vec![step_with(vec![-1.0, -1.0])], terminal: None };
        assert_abs_diff_eq!(trajectory_return(&t2), -2.0);
        let joined = t.clone().concat(t2.clone());
        assert_abs_diff_eq!(trajectory_return(&joined), trajectory_return(&t) + trajectory_return(&t2));
    }

    #[test]
    fn rejects_too_many_agents() {
        let agents = (0..9).map(|i| agent(10.0 + 10.0 * i as f64, 0.0, 5.0)).collect();
        let err = Scene::new(two_lane_world(), agents).unwrap_err();
        assert!(err.to_string().contains("agents"), "{err}");
    }

    #[test]
    fn zero_action_at_desired_state_accrues_nothing() {
        let world = two_lane_world();
        let w = RewardWeights::default();
        let mut scene = Scene::new(world, vec![agent(5.0, 0.0, 10.0)]).unwrap();
        let mut total = 0.0;
        for _ in 0..8 {
            let tr = transition(&scene, &JointAction::zeros(1), 1.0, 10, &w);
            total += tr.total_reward();
            scene = tr.next;
        }
        assert_eq!(total, 0.0);
    }
}
