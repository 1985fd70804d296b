//! Sources of per-agent action mixtures for biased expansion and selection.

use std::sync::Arc;

use rand::Rng;

use crate::gmm::FactoredActionGmm;
use crate::mdn::{predict_policy, MdnWeights};
use crate::scene::{ActionBounds, JointAction, Scene};

/// Predicts one action mixture per scene agent from a scene history (oldest
/// first, current scene last). `None` marks agents without a prediction.
pub trait ActionPrior: Send + Sync {
    fn predict(&self, history: &[Scene]) -> Vec<Option<FactoredActionGmm>>;

    /// Mixture component count, when the prior has a fixed one.
    fn components(&self) -> Option<usize> {
        None
    }
}

impl<F> ActionPrior for F
where
    F: Fn(&[Scene]) -> Vec<Option<FactoredActionGmm>> + Send + Sync,
{
    fn predict(&self, history: &[Scene]) -> Vec<Option<FactoredActionGmm>> {
        self(history)
    }
}

/// Network prior: one forward pass from agent 0's viewpoint covers every
/// agent through the slot assignment.
#[derive(Debug, Clone)]
pub struct MdnPrior {
    weights: Arc<MdnWeights>,
}

impl MdnPrior {
    pub fn new(weights: Arc<MdnWeights>) -> Self {
        MdnPrior { weights }
    }

    pub fn weights(&self) -> &MdnWeights {
        &self.weights
    }
}

impl ActionPrior for MdnPrior {
    fn predict(&self, history: &[Scene]) -> Vec<Option<FactoredActionGmm>> {
        let agents = history.last().map_or(0, Scene::agent_count);
        match predict_policy(&self.weights, history, 0) {
            Ok(p) => p.per_agent(agents),
            Err(e) => {
                log::warn!("prediction failed, expanding uniformly: {e}");
                vec![None; agents]
            }
        }
    }

    fn components(&self) -> Option<usize> {
        Some(self.weights.metadata().components)
    }
}

/// Number of mixture samples scored per agent by [`mdn_standalone_policy`].
pub const STANDALONE_SAMPLES: usize = 1000;

/// Acts without search: draws samples from each agent's mixture and keeps the
/// one with the highest density. Agents without a prediction take the
/// midpoint of the action bounds.
pub fn mdn_standalone_policy<R: Rng + ?Sized>(
    prior: &dyn ActionPrior,
    history: &[Scene],
    bounds: &ActionBounds,
    rng: &mut R,
) -> JointAction {
    let agents = history.last().map_or(0, Scene::agent_count);
    let preds = prior.predict(history);
    JointAction(
        (0..agents)
            .map(|g| match preds.get(g).and_then(Option::as_ref) {
                Some(gmm) => {
                    let mut best = gmm.sample(rng, bounds);
                    let mut best_d = gmm.joint_density(&best);
                    for _ in 1..STANDALONE_SAMPLES {
                        let a = gmm.sample(rng, bounds);
                        let d = gmm.joint_density(&a);
                        if d > best_d {
                            best = a;
                            best_d = d;
                        }
                    }
                    best
                }
                None => bounds.midpoint(),
            })
            .collect(),
    )
}
