//! Tree policies: UCT scoring, progressive widening, expansion samplers and
//! the random rollout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::Node;
use crate::gmm::FactoredActionGmm;
use crate::scene::{transition, Action, ActionBounds, JointAction, RewardWeights, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplorationMode {
    /// `c·sqrt(N_s / N_sa)`
    #[default]
    Sqrt,
    /// `c·sqrt(ln N_s / N_sa)`
    SqrtLog,
}

/// `Q + prior·c·sqrt(N_s/N_sa)`; a missing prior counts as 1.
pub fn uct(q: f64, n_s: f64, n_sa: f64, c: f64, prior: Option<f64>) -> f64 {
    uct_with(ExplorationMode::Sqrt, q, n_s, n_sa, c, prior)
}

pub fn uct_with(mode: ExplorationMode, q: f64, n_s: f64, n_sa: f64, c: f64, prior: Option<f64>) -> f64 {
    debug_assert!(n_sa >= 1.0);
    let ratio = match mode {
        ExplorationMode::Sqrt => n_s / n_sa,
        ExplorationMode::SqrtLog => n_s.ln() / n_sa,
    };
    q + prior.unwrap_or(1.0) * c * ratio.sqrt()
}

/// Index of the child with the highest UCT score; ties go to the lowest index.
pub fn select(node: &Node, c: f64, mode: ExplorationMode, use_prior: bool) -> usize {
    assert!(!node.children.is_empty(), "select on a node without children");
    let n_s = node.visits as f64;
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, e) in node.children.iter().enumerate() {
        let prior = if use_prior { e.prior_weight } else { None };
        let score = uct_with(mode, e.q, n_s, e.visits as f64, c, prior);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

/// Progressive widening: room for another child while
/// `|children| < ceil(pw_k · N_s^pw_alpha)`.
pub fn widening_limit(n_s: u64, pw_k: f64, pw_alpha: f64) -> usize {
    (pw_k * (n_s as f64).powf(pw_alpha)).ceil() as usize
}

pub fn expandable(node: &Node, pw_k: f64, pw_alpha: f64) -> bool {
    !node.terminal && node.children.len() < widening_limit(node.visits, pw_k, pw_alpha)
}

fn uniform_action<R: Rng + ?Sized>(rng: &mut R, b: &ActionBounds) -> Action {
    let u = |rng: &mut R, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let dv = u(rng, b.dv_min, b.dv_max);
    let dy = u(rng, b.dy_min, b.dy_max);
    Action::new(dv, dy)
}

/// Joint action with every component drawn independently and uniformly.
pub fn expand_uniform<R: Rng + ?Sized>(agents: usize, rng: &mut R, bounds: &ActionBounds) -> JointAction {
    JointAction((0..agents).map(|_| uniform_action(rng, bounds)).collect())
}

/// Joint action drawn from per-agent mixtures; agents without a prediction
/// fall back to the uniform sampler, consuming the generator the same way.
pub fn expand_biased<R: Rng + ?Sized>(
    predictions: &[Option<FactoredActionGmm>],
    agents: usize,
    rng: &mut R,
    bounds: &ActionBounds,
) -> JointAction {
    JointAction(
        (0..agents)
            .map(|g| match predictions.get(g).and_then(Option::as_ref) {
                Some(gmm) => gmm.sample(rng, bounds),
                None => uniform_action(rng, bounds),
            })
            .collect(),
    )
}

/// Density weight of a joint action: per agent density divided by the mode
/// bound, multiplied over agents, clamped to `[floor, 1]`.
pub fn selection_prior(predictions: &[Option<FactoredActionGmm>], action: &JointAction, floor: f64) -> f64 {
    let mut w = 1.0;
    for (g, a) in action.iter().enumerate() {
        if let Some(Some(gmm)) = predictions.get(g) {
            let bound = gmm.mode_density_bound();
            if bound > 0.0 {
                w *= gmm.joint_density(a) / bound;
            }
        }
    }
    w.clamp(floor, 1.0)
}

/// Random rollout from a scene at `depth` until `horizon` or the first collision.
#[allow(clippy::too_many_arguments)]
pub fn simulate<R: Rng + ?Sized>(
    scene: &Scene,
    depth: usize,
    horizon: usize,
    rng: &mut R,
    bounds: &ActionBounds,
    dt: f64,
    substeps: usize,
    reward: &RewardWeights,
) -> f64 {
    let mut ret = 0.0;
    let mut cur = scene.clone();
    for _ in depth..horizon {
        let action = expand_uniform(cur.agent_count(), rng, bounds);
        let tr = transition(&cur, &action, dt, substeps, reward);
        ret += tr.total_reward();
        if tr.any_collision() {
            break;
        }
        cur = tr.next;
    }
    ret
}
