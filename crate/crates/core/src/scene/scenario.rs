//! Scenario files: road, agents, obstacles, reward weights, search settings,
//! randomization ranges and the episode end condition in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentState, LaneSpec, Obstacle, RewardWeights, Scene, SceneError, World};
use crate::mcts::SearchConfig;
use crate::scene::RandomizationRanges;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadFile {
    pub length_m: f64,
    pub lanes: Vec<LaneSpec>,
}

/// When an episode ends. Success means no collision before this point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndCondition {
    /// Maximum number of executed steps.
    pub steps: usize,
    /// Optional early end once every forward-driving agent has passed this `x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_goal_m: Option<f64>,
}

impl Default for EndCondition {
    fn default() -> Self {
        EndCondition {
            steps: 10,
            x_goal_m: None,
        }
    }
}

impl EndCondition {
    pub fn reached(&self, scene: &Scene) -> bool {
        if scene.t >= self.steps {
            return true;
        }
        match self.x_goal_m {
            Some(goal) => scene
                .agents
                .iter()
                .filter(|a| !a.oncoming)
                .all(|a| a.x_lon >= goal),
            None => false,
        }
    }
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub road: RoadFile,
    pub agents: Vec<AgentState>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub randomization: RandomizationRanges,
    #[serde(default)]
    pub end: EndCondition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub scene: Scene,
    pub reward: RewardWeights,
    pub search: SearchConfig,
    pub randomization: RandomizationRanges,
    pub end: EndCondition,
}

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self, SceneError> {
        let world = World::new(file.road.lanes, file.road.length_m, file.obstacles);
        let scene = Scene::new(world, file.agents)?;
        file.reward
            .validate()
            .map_err(|m| SceneError::invalid("reward", m))?;
        file.search
            .validate()
            .map_err(|m| SceneError::invalid("search", m))?;
        file.randomization
            .validate()
            .map_err(|m| SceneError::invalid("randomization", m))?;
        Ok(Scenario {
            name: file.name,
            scene,
            reward: file.reward,
            search: file.search,
            randomization: file.randomization,
            end: file.end,
        })
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            name: self.name.clone(),
            road: RoadFile {
                length_m: self.scene.world.road_length,
                lanes: self.scene.world.lanes.clone(),
            },
            agents: self.scene.agents.clone(),
            obstacles: self.scene.world.obstacles.clone(),
            reward: self.reward,
            search: self.search.clone(),
            randomization: self.randomization.clone(),
            end: self.end,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SceneError::Parse {
                path: if path == "." { "<root>".into() } else { path },
                msg: e.into_inner().to_string(),
            }
        })?;
        Scenario::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    std::fs::write(path, scenario.to_json() + "\n").map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}
