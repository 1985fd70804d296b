use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_collision, Scene, SceneError, World};

const MAX_ATTEMPTS: usize = 100;

/// Closed interval `[lo, hi]`, written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Range { lo: v[0], hi: v[1] }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

impl Range {
    pub const ZERO: Range = Range { lo: 0.0, hi: 0.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Additive offsets per agent attribute; `v` / `v_desired` replace the value when set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentRanges {
    pub dx: Range,
    pub dy: Range,
    pub heading: Range,
    pub length: Range,
    pub width: Range,
    pub dv: Range,
    pub dv_desired: Range,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<Range>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_desired: Option<Range>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleRanges {
    pub dx: Range,
    pub dy: Range,
    pub length: Range,
    pub width: Range,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationRanges {
    pub agents: AgentRanges,
    pub obstacles: ObstacleRanges,
    /// Offset in meters added to the mean lane width; the whole cross-section
    /// (lanes, agents, obstacles) is scaled about `y = 0` accordingly.
    pub lane_width: Range,
}

impl RandomizationRanges {
    pub fn validate(&self) -> Result<(), String> {
        let a = &self.agents;
        let o = &self.obstacles;
        let mut all = vec![
            ("agents.dx", a.dx),
            ("agents.dy", a.dy),
            ("agents.heading", a.heading),
            ("agents.length", a.length),
            ("agents.width", a.width),
            ("agents.dv", a.dv),
            ("agents.dv_desired", a.dv_desired),
            ("obstacles.dx", o.dx),
            ("obstacles.dy", o.dy),
            ("obstacles.length", o.length),
            ("obstacles.width", o.width),
            ("lane_width", self.lane_width),
        ];
        if let Some(v) = a.v {
            all.push(("agents.v", v));
        }
        if let Some(v) = a.v_desired {
            all.push(("agents.v_desired", v));
        }
        for (name, r) in all {
            if !r.valid() {
                return Err(format!("{name}: range [{}, {}] is degenerate", r.lo, r.hi));
            }
        }
        Ok(())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a;
    while a <= -PI {
        a += 2.0 * PI;
    }
    while a > PI {
        a -= 2.0 * PI;
    }
    a
}

fn perturb_once(scene: &Scene, r: &RandomizationRanges, rng: &mut ChaCha8Rng) -> Scene {
    let world = &scene.world;
    let mean_width =
        world.lanes.iter().map(|l| l.width).sum::<f64>() / world.lanes.len().max(1) as f64;
    let scale = (mean_width + r.lane_width.sample(rng)) / mean_width;

    let lanes = world
        .lanes
        .iter()
        .map(|l| super::LaneSpec {
            id: l.id,
            center_offset: l.center_offset * scale,
            width: l.width * scale,
        })
        .collect();
    let obstacles = world
        .obstacles
        .iter()
        .map(|o| super::Obstacle {
            x_lon: o.x_lon + r.obstacles.dx.sample(rng),
            y_lat: o.y_lat * scale + r.obstacles.dy.sample(rng),
            length: o.length + r.obstacles.length.sample(rng),
            width: o.width + r.obstacles.width.sample(rng),
        })
        .collect();
    let ar = &r.agents;
    let agents = scene
        .agents
        .iter()
        .map(|a| {
            let mut n = *a;
            n.x_lon += ar.dx.sample(rng);
            n.y_lat = a.y_lat * scale + ar.dy.sample(rng);
            n.heading = wrap_angle(a.heading + ar.heading.sample(rng));
            n.length += ar.length.sample(rng);
            n.width += ar.width.sample(rng);
            let dv = ar.dv.sample(rng);
            n.v = match ar.v {
                Some(v) => v.sample(rng),
                None => a.v + dv,
            };
            let dvd = ar.dv_desired.sample(rng);
            n.v_desired = match ar.v_desired {
                Some(v) => v.sample(rng),
                None => a.v_desired + dvd,
            };
            n
        })
        .collect();
    Scene {
        world: std::sync::Arc::new(World::new(lanes, world.road_length, obstacles)),
        agents,
        t: scene.t,
        prev_agents: None,
    }
}

/// Perturbs positions, headings, sizes, speeds and road width uniformly within
/// `ranges`, resampling until the scene is valid and collision free.
pub fn randomize_scenario(
    scene: &Scene,
    seed: u64,
    ranges: &RandomizationRanges,
) -> Result<Scene, SceneError> {
    ranges
        .validate()
        .map_err(|m| SceneError::invalid("randomization", m))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let candidate = perturb_once(scene, ranges, &mut rng);
        match candidate.validate() {
            Err(e) => last = e.to_string(),
            Ok(()) if check_collision(&candidate, 1).iter().any(|&c| c) => {
                last = "initial collision".into();
            }
            Ok(()) => return Ok(candidate),
        }
    }
    Err(SceneError::UnsatisfiableRandomization {
        attempts: MAX_ATTEMPTS,
        last,
    })
}
