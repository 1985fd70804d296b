//! Closed-loop episodes: plan at every step, execute the selected joint
//! action, stop at the scenario's end condition or the first collision.

use crate::features::HISTORY;
use crate::mcts::{mdn_standalone_policy, search, ActionPrior, SearchConfig, SearchError, SearchResult};
use crate::scene::{randomize_scenario, transition, JointAction, Scenario, Scene, SceneError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// How each step's joint action is chosen.
#[derive(Clone, Copy)]
pub enum Policy<'a> {
    /// Tree search; the prior must be present iff the config's strategy is `mdn`.
    Search(Option<&'a dyn ActionPrior>),
    /// Network only, no search.
    Standalone(&'a dyn ActionPrior),
}

#[derive(Debug, Clone)]
pub struct EpisodeStep {
    pub scene: Scene,
    pub action: JointAction,
    pub search: Option<SearchResult>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub initial: Scene,
    pub steps: Vec<EpisodeStep>,
    pub final_scene: Scene,
    pub collided: bool,
}

impl Episode {
    pub fn success(&self) -> bool {
        !self.collided
    }
}

/// SplitMix64 finalizer over two inputs; used to derive per-step seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initial scene for run seed `seed`: the scenario randomized with that seed.
pub fn initial_scene(scenario: &Scenario, seed: u64) -> Result<Scene, SceneError> {
    randomize_scenario(&scenario.scene, seed, &scenario.randomization)
}

pub fn run_episode(
    scenario: &Scenario,
    seed: u64,
    config: &SearchConfig,
    policy: Policy<'_>,
) -> Result<Episode, EpisodeError> {
    let initial = initial_scene(scenario, seed)?;
    let mut scene = initial.clone();
    let mut history = vec![scene.clone()];
    let mut steps = Vec::new();
    let mut collided = false;
    while !scenario.end.reached(&scene) {
        let step_seed = mix_seed(seed, scene.t as u64);
        let (action, result) = match policy {
            Policy::Search(prior) => {
                let cfg = SearchConfig {
                    seed: step_seed,
                    ..config.clone()
                };
                let r = search(&scene, &history, &cfg, &scenario.reward, prior)?;
                (r.selected_action.clone(), Some(r))
            }
            Policy::Standalone(prior) => {
                let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
                (mdn_standalone_policy(prior, &history, &config.action_bounds, &mut rng), None)
            }
        };
        let tr = transition(&scene, &action, config.dt, config.substeps, &scenario.reward);
        steps.push(EpisodeStep {
            scene: scene.clone(),
            action,
            search: result,
        });
        scene = tr.next.clone();
        history.push(tr.next);
        if history.len() > HISTORY {
            history.remove(0);
        }
        if tr.collided.iter().any(|&c| c) {
            collided = true;
            break;
        }
    }
    Ok(Episode {
        initial,
        steps,
        final_scene: scene,
        collided,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_seed_separates_steps() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(0, 1));
        assert_eq!(mix_seed(5, 9), mix_seed(5, 9));
    }
}
