//! Continuous-action cooperative MCTS over joint actions.
//!
//! One iteration descends from the root, choosing between progressive-widening
//! expansion and UCT selection at each node, runs a uniform random rollout from
//! a newly created child and backs the cooperative return up the path. The
//! learned prior can bias expansion (at the root or at every node) and weight
//! the exploration term of UCT.

mod policy;
mod prior;
mod tree;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use policy::{
    expand_biased, expand_uniform, expandable, select, selection_prior, simulate, uct, uct_with, widening_limit,
    ExplorationMode,
};
pub use prior::{mdn_standalone_policy, ActionPrior, MdnPrior, STANDALONE_SAMPLES};
pub use tree::{Edge, Node, Tree};

use crate::scene::{transition, Action, ActionBounds, JointAction, RewardWeights, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Baseline,
    Mdn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integration {
    #[default]
    Root,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub iterations: usize,
    pub c: f64,
    pub pw_k: f64,
    pub pw_alpha: f64,
    pub horizon: usize,
    pub seed: u64,
    pub dt: f64,
    pub substeps: usize,
    pub action_bounds: ActionBounds,
    pub strategy: Strategy,
    pub integration: Integration,
    pub use_selection_bias: bool,
    pub components: usize,
    pub prior_floor: f64,
    pub exploration: ExplorationMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 1000,
            c: 1.0,
            pw_k: 2.0,
            pw_alpha: 0.5,
            horizon: 8,
            seed: 0,
            dt: 1.0,
            substeps: 10,
            action_bounds: ActionBounds::default(),
            strategy: Strategy::Baseline,
            integration: Integration::Root,
            use_selection_bias: false,
            components: 2,
            prior_floor: 0.05,
            exploration: ExplorationMode::Sqrt,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iterations == 0 {
            return Err("iterations must be >= 1".into());
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(format!("c must be > 0, got {}", self.c));
        }
        if !(self.pw_k > 0.0 && self.pw_k.is_finite()) {
            return Err(format!("pw_k must be > 0, got {}", self.pw_k));
        }
        if !(self.pw_alpha > 0.0 && self.pw_alpha <= 1.0) {
            return Err(format!("pw_alpha must be in (0, 1], got {}", self.pw_alpha));
        }
        if self.horizon == 0 {
            return Err("horizon must be >= 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format!("dt must be > 0, got {}", self.dt));
        }
        if self.substeps == 0 {
            return Err("substeps must be >= 1".into());
        }
        if !(2..=3).contains(&self.components) {
            return Err(format!("components must be 2 or 3, got {}", self.components));
        }
        if !(self.prior_floor > 0.0 && self.prior_floor <= 1.0) {
            return Err(format!("prior_floor must be in (0, 1], got {}", self.prior_floor));
        }
        self.action_bounds.validate()
    }

    /// Short label such as `baseline` or `mdn-k3-all-selection`.
    pub fn descriptor(&self) -> String {
        match self.strategy {
            Strategy::Baseline => "baseline".into(),
            Strategy::Mdn => format!(
                "mdn-k{}-{}-{}",
                self.components,
                match self.integration {
                    Integration::Root => "root",
                    Integration::All => "all",
                },
                if self.use_selection_bias { "selection" } else { "no-selection" }
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Prior(String),
    #[error("root scene is terminal, nothing to search")]
    TerminalRoot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootChild {
    pub action: JointAction,
    pub visits: u64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    IterationsExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub selected_action: JointAction,
    pub selected_index: usize,
    pub root_children: Vec<RootChild>,
    pub root_visits: u64,
    pub iterations: usize,
    pub seed: u64,
    pub strategy: String,
    pub termination: Termination,
    pub iteration_returns: Vec<f64>,
    pub wall_time_ms: f64,
}

impl SearchResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("search result serializes")
    }
}

/// Root child with the most visits; ties go to the higher `q`, then the lower index.
pub fn best_child(node: &Node) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in node.children.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let eb = &node.children[b];
                if e.visits > eb.visits || (e.visits == eb.visits && e.q > eb.q) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Incrementally driven search; [`search`] wraps the common case.
pub struct Search<'a> {
    tree: Tree,
    history: Vec<Scene>,
    config: SearchConfig,
    reward: RewardWeights,
    prior: Option<&'a dyn ActionPrior>,
    rng: ChaCha8Rng,
    returns: Vec<f64>,
}

impl<'a> Search<'a> {
    /// `history` holds earlier scenes (oldest first) and may end with `root`;
    /// the prior sees it followed by the scenes along each tree path.
    pub fn new(
        root: &Scene,
        history: &[Scene],
        config: &SearchConfig,
        reward: &RewardWeights,
        prior: Option<&'a dyn ActionPrior>,
    ) -> Result<Self, SearchError> {
        config.validate().map_err(SearchError::Config)?;
        match (config.strategy, prior) {
            (Strategy::Baseline, Some(_)) => {
                return Err(SearchError::Prior("baseline strategy takes no prior".into()))
            }
            (Strategy::Mdn, None) => return Err(SearchError::Prior("mdn strategy needs a prior".into())),
            (Strategy::Mdn, Some(p)) => {
                if let Some(k) = p.components() {
                    if k != config.components {
                        return Err(SearchError::Prior(format!(
                            "prior has {k} components, configuration asks for {}",
                            config.components
                        )));
                    }
                }
            }
            (Strategy::Baseline, None) => {}
        }
        let mut hist: Vec<Scene> = history.to_vec();
        if hist.last() != Some(root) {
            hist.push(root.clone());
        }
        let root_terminal = crate::scene::check_collision(root, config.substeps).iter().any(|&c| c);
        if root_terminal {
            return Err(SearchError::TerminalRoot);
        }
        Ok(Search {
            tree: Tree::new(root.clone(), false),
            history: hist,
            config: config.clone(),
            reward: *reward,
            prior,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            returns: Vec::with_capacity(config.iterations),
        })
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn iterations_done(&self) -> usize {
        self.returns.len()
    }

    fn ensure_prediction(&mut self, n: usize) {
        if self.tree.nodes[n].prediction.is_some() {
            return;
        }
        let prior = self.prior.expect("prediction requested without a prior");
        // The root history already ends with the root scene.
        let hist = self.tree.history(&self.history[..self.history.len() - 1], n);
        let p = prior.predict(&hist);
        self.tree.nodes[n].prediction = Some(p);
    }

    fn biased_here(&self, n: usize) -> bool {
        self.config.strategy == Strategy::Mdn
            && (self.config.integration == Integration::All || self.tree.nodes[n].depth == 0)
    }

    fn ensure_edge_priors(&mut self, n: usize) {
        if self.tree.nodes[n].children.iter().all(|e| e.prior_weight.is_some()) {
            return;
        }
        self.ensure_prediction(n);
        let floor = self.config.prior_floor;
        let node = &mut self.tree.nodes[n];
        let preds = node.prediction.as_deref().unwrap_or(&[]);
        for e in node.children.iter_mut().filter(|e| e.prior_weight.is_none()) {
            e.prior_weight = Some(selection_prior(preds, &e.action, floor));
        }
    }

    /// Runs one select/expand/simulate/backpropagate pass and returns the
    /// cooperative return credited to the root edge.
    pub fn iterate(&mut self) -> f64 {
        let cfg = self.config.clone();
        let use_prior = cfg.strategy == Strategy::Mdn && cfg.use_selection_bias;
        let mut path: Vec<(usize, usize)> = Vec::with_capacity(cfg.horizon);
        let mut n = 0usize;
        let (leaf_value, terminal_leaf) = loop {
            if self.tree.nodes[n].terminal {
                break (0.0, Some(n));
            }
            if expandable(&self.tree.nodes[n], cfg.pw_k, cfg.pw_alpha) {
                let agents = self.tree.nodes[n].scene.agent_count();
                let action = if self.biased_here(n) {
                    self.ensure_prediction(n);
                    let preds = self.tree.nodes[n].prediction.as_deref().unwrap_or(&[]);
                    expand_biased(preds, agents, &mut self.rng, &cfg.action_bounds)
                } else {
                    expand_uniform(agents, &mut self.rng, &cfg.action_bounds)
                };
                let node = &self.tree.nodes[n];
                let tr = transition(&node.scene, &action, cfg.dt, cfg.substeps, &self.reward);
                let depth = node.depth + 1;
                let terminal = depth >= cfg.horizon || tr.any_collision();
                let reward = tr.total_reward();
                let e = self.tree.add_child(n, action, reward, tr.next, terminal);
                path.push((n, e));
                let child = self.tree.nodes[n].children[e].child;
                let value = if terminal {
                    0.0
                } else {
                    simulate(
                        &self.tree.nodes[child].scene,
                        depth,
                        cfg.horizon,
                        &mut self.rng,
                        &cfg.action_bounds,
                        cfg.dt,
                        cfg.substeps,
                        &self.reward,
                    )
                };
                break (value, None);
            }
            if use_prior {
                self.ensure_edge_priors(n);
            }
            let e = select(&self.tree.nodes[n], cfg.c, cfg.exploration, use_prior);
            path.push((n, e));
            n = self.tree.nodes[n].children[e].child;
        };
        self.tree.backpropagate(&path, leaf_value, terminal_leaf);
        let ret = path
            .iter()
            .map(|&(n, e)| self.tree.nodes[n].children[e].reward)
            .sum::<f64>()
            + leaf_value;
        self.returns.push(ret);
        ret
    }

    pub fn run(&mut self, iterations: usize) {
        for _ in 0..iterations {
            self.iterate();
        }
    }

    pub fn result(&self, wall_time_ms: f64) -> SearchResult {
        let root = self.tree.root();
        let best = best_child(root).expect("at least one iteration has run");
        SearchResult {
            selected_action: root.children[best].action.clone(),
            selected_index: best,
            root_children: root
                .children
                .iter()
                .map(|e| RootChild {
                    action: e.action.clone(),
                    visits: e.visits,
                    q: e.q,
                })
                .collect(),
            root_visits: root.visits,
            iterations: self.returns.len(),
            seed: self.config.seed,
            strategy: self.config.descriptor(),
            termination: Termination::IterationsExhausted,
            iteration_returns: self.returns.clone(),
            wall_time_ms,
        }
    }
}

/// Runs `config.iterations` iterations from `root`.
pub fn search(
    root: &Scene,
    history: &[Scene],
    config: &SearchConfig,
    reward: &RewardWeights,
    prior: Option<&dyn ActionPrior>,
) -> Result<SearchResult, SearchError> {
    let start = Instant::now();
    let mut s = Search::new(root, history, config, reward, prior)?;
    s.run(config.iterations);
    Ok(s.result(start.elapsed().as_secs_f64() * 1e3))
}

/// Expected `|v + dv - v_desired|` when `dv` is uniform on `[lo, hi]`.
pub fn uniform_speed_error(v: f64, v_desired: f64, lo: f64, hi: f64) -> f64 {
    // E|U - t| for U ~ U[lo, hi] and t = v_desired - v.
    let t = v_desired - v;
    let w = hi - lo;
    if w <= 0.0 {
        return (lo - t).abs();
    }
    if t <= lo {
        return 0.5 * (lo + hi) - t;
    }
    if t >= hi {
        return t - 0.5 * (lo + hi);
    }
    ((t - lo).powi(2) + (hi - t).powi(2)) / (2.0 * w)
}

/// Keeps an action inside the bounds.
pub fn clamp_action(a: &Action, b: &ActionBounds) -> Action {
    Action::new(a.dv_lon.clamp(b.dv_min, b.dv_max), a.dy_lat.clamp(b.dy_min, b.dy_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{FactoredActionGmm, Gmm1D};
    use crate::scene::{AgentState, LaneSpec, World};

    fn road(v: f64, v_desired: f64, agents: usize) -> Scene {
        let world = World::new(
            vec![
                LaneSpec {
                    id: 0,
                    center_offset: 0.0,
                    width: 3.5,
                },
                LaneSpec {
                    id: 1,
                    center_offset: 3.5,
                    width: 3.5,
                },
            ],
            2000.0,
            vec![],
        );
        let list = (0..agents)
            .map(|i| AgentState {
                x_lon: 10.0 + 30.0 * i as f64,
                y_lat: 0.0,
                heading: 0.0,
                v,
                a: 0.0,
                length: 4.5,
                width: 1.8,
                v_desired,
                lane_desired: 0,
                oncoming: false,
            })
            .collect();
        Scene::new(world, list).unwrap()
    }

    fn cfg(iterations: usize, seed: u64) -> SearchConfig {
        SearchConfig {
            iterations,
            seed,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn one_iteration_one_child() {
        let s = road(8.0, 10.0, 1);
        let r = search(&s, &[], &cfg(1, 0), &RewardWeights::default(), None).unwrap();
        assert_eq!(r.root_children.len(), 1);
        assert_eq!(r.selected_index, 0);
        assert_eq!(r.selected_action, r.root_children[0].action);
    }

    #[test]
    fn tree_stays_consistent() {
        let s = road(8.0, 10.0, 2);
        let mut search = Search::new(&s, &[], &cfg(300, 4), &RewardWeights::default(), None).unwrap();
        for _ in 0..300 {
            search.iterate();
            search.tree().check_consistency().unwrap();
        }
        assert_eq!(search.tree().root().visits, 301);
    }

    #[test]
    fn same_seed_same_result() {
        let s = road(8.0, 10.0, 2);
        let a = search(&s, &[], &cfg(200, 9), &RewardWeights::default(), None).unwrap();
        let b = search(&s, &[], &cfg(200, 9), &RewardWeights::default(), None).unwrap();
        assert_eq!(a.root_children, b.root_children);
        assert_eq!(a.iteration_returns, b.iteration_returns);
    }

    #[test]
    fn mdn_without_predictions_matches_baseline() {
        let s = road(8.0, 10.0, 2);
        let base = search(&s, &[], &cfg(300, 2), &RewardWeights::default(), None).unwrap();
        let empty = |h: &[Scene]| vec![None; h.last().unwrap().agent_count()];
        for integration in [Integration::Root, Integration::All] {
            let c = SearchConfig {
                strategy: Strategy::Mdn,
                integration,
                use_selection_bias: true,
                ..cfg(300, 2)
            };
            let r = search(&s, &[], &c, &RewardWeights::default(), Some(&empty)).unwrap();
            assert_eq!(r.root_children, base.root_children);
        }
    }

    #[test]
    fn prior_presence_must_match_strategy() {
        let s = road(8.0, 10.0, 1);
        let empty = |_: &[Scene]| vec![None];
        let w = RewardWeights::default();
        assert!(matches!(search(&s, &[], &cfg(5, 0), &w, Some(&empty)), Err(SearchError::Prior(_))));
        let mdn = SearchConfig {
            strategy: Strategy::Mdn,
            ..cfg(5, 0)
        };
        assert!(matches!(search(&s, &[], &mdn, &w, None), Err(SearchError::Prior(_))));
    }

    #[test]
    fn root_expansion_follows_a_spike_prior() {
        let s = road(8.0, 10.0, 1);
        let spike = FactoredActionGmm {
            lon: Gmm1D::single(2.0, 1e-6).unwrap(),
            lat: Gmm1D::single(0.0, 1e-6).unwrap(),
        };
        let prior = move |_: &[Scene]| vec![Some(spike.clone())];
        let c = SearchConfig {
            strategy: Strategy::Mdn,
            ..cfg(50, 1)
        };
        let r = search(&s, &[], &c, &RewardWeights::default(), Some(&prior)).unwrap();
        for child in &r.root_children {
            assert!((child.action[0].dv_lon - 2.0).abs() < 0.01);
        }
    }

    #[test]
    fn uniform_speed_error_examples() {
        assert!((uniform_speed_error(8.0, 10.0, -5.0, 5.0) - 2.9).abs() < 1e-12);
        assert!((uniform_speed_error(10.0, 10.0, -5.0, 5.0) - 2.5).abs() < 1e-12);
        assert!((uniform_speed_error(0.0, 10.0, -5.0, 5.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_out_of_range_values() {
        let bad = [
            SearchConfig { c: 0.0, ..SearchConfig::default() },
            SearchConfig { pw_alpha: 1.5, ..SearchConfig::default() },
            SearchConfig { components: 4, ..SearchConfig::default() },
            SearchConfig { prior_floor: 0.0, ..SearchConfig::default() },
            SearchConfig { iterations: 0, ..SearchConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(SearchConfig::default().validate().is_ok());
    }

    #[test]
    fn result_json_has_export_fields() {
        let s = road(8.0, 10.0, 1);
        let r = search(&s, &[], &cfg(3, 7), &RewardWeights::default(), None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["selected_action", "root_children", "iterations", "seed", "strategy", "wall_time_ms"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["strategy"], "baseline");
    }
}
