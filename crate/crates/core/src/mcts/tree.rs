//! Arena search tree over joint actions.
//!
//! Bookkeeping: a node's visit count starts at 1 when it is created and grows
//! by one for every later iteration that passes through it, so
//! `N_s = 1 + Σ N_sa + terminal_hits`, where `terminal_hits` counts iterations
//! that stopped at the node because it is terminal. For every non-root node
//! `N_s` equals the `N_sa` of its incoming edge.

use crate::gmm::FactoredActionGmm;
use crate::scene::{JointAction, Scene};

#[derive(Debug, Clone)]
pub struct Edge {
    pub action: JointAction,
    pub visits: u64,
    /// Incremental mean of the returns backed up through this edge.
    pub q: f64,
    /// Cooperative reward of the transition itself.
    pub reward: f64,
    /// Plain sum of the same returns, kept to cross-check `q`.
    pub return_sum: f64,
    /// Normalized selection prior, filled in lazily.
    pub prior_weight: Option<f64>,
    pub child: usize,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub scene: Scene,
    pub parent: Option<usize>,
    pub depth: usize,
    pub visits: u64,
    pub terminal_hits: u64,
    pub terminal: bool,
    pub children: Vec<Edge>,
    /// Per-agent action mixtures at this node, computed on first use.
    pub prediction: Option<Vec<Option<FactoredActionGmm>>>,
}

#[derive(Debug, Clone)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn new(root: Scene, terminal: bool) -> Self {
        Tree {
            nodes: vec![Node {
                scene: root,
                parent: None,
                depth: 0,
                visits: 1,
                terminal_hits: 0,
                terminal,
                children: Vec::new(),
                prediction: None,
            }],
        }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Appends a child below `parent` and returns the new edge index.
    pub fn add_child(&mut self, parent: usize, action: JointAction, reward: f64, scene: Scene, terminal: bool) -> usize {
        let child = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(Node {
            scene,
            parent: Some(parent),
            depth,
            // The creation visit.
            visits: 1,
            terminal_hits: 0,
            terminal,
            children: Vec::new(),
            prediction: None,
        });
        let edges = &mut self.nodes[parent].children;
        edges.push(Edge {
            action,
            visits: 0,
            q: 0.0,
            reward,
            return_sum: 0.0,
            prior_weight: None,
            child,
        });
        edges.len() - 1
    }

    /// Backs `leaf_value` up along `path` (pairs of node and edge index, root
    /// first). Each edge receives the return from its own transition onwards.
    /// When `terminal_leaf` is set the iteration ended on that terminal node.
    pub fn backpropagate(&mut self, path: &[(usize, usize)], leaf_value: f64, terminal_leaf: Option<usize>) {
        if let Some(n) = terminal_leaf {
            let node = &mut self.nodes[n];
            node.visits += 1;
            node.terminal_hits += 1;
        }
        let mut g = leaf_value;
        for &(n, e) in path.iter().rev() {
            let node = &mut self.nodes[n];
            let edge = &mut node.children[e];
            g += edge.reward;
            edge.visits += 1;
            edge.q += (g - edge.q) / edge.visits as f64;
            edge.return_sum += g;
            node.visits += 1;
        }
    }

    /// History of scenes leading to node `n`: the scenes before the root,
    /// the root, then the scenes along the tree path, oldest first.
    pub fn history(&self, root_history: &[Scene], n: usize) -> Vec<Scene> {
        let mut path = Vec::new();
        let mut cur = Some(n);
        while let Some(i) = cur {
            if i == 0 {
                break;
            }
            path.push(self.nodes[i].scene.clone());
            cur = self.nodes[i].parent;
        }
        path.reverse();
        let mut out = Vec::with_capacity(root_history.len() + path.len() + 1);
        out.extend_from_slice(root_history);
        out.push(self.nodes[0].scene.clone());
        out.extend(path);
        out
    }

    /// Checks the visit-count identity, parent links and that every `q`
    /// matches its shadow mean.
    pub fn check_consistency(&self) -> Result<(), String> {
        for (i, node) in self.nodes.iter().enumerate() {
            let sum: u64 = node.children.iter().map(|e| e.visits).sum();
            if node.visits != 1 + sum + node.terminal_hits {
                return Err(format!(
                    "node {i}: N_s = {} but 1 + Σ N_sa + terminal hits = {}",
                    node.visits,
                    1 + sum + node.terminal_hits
                ));
            }
            if node.terminal && !node.children.is_empty() {
                return Err(format!("terminal node {i} has children"));
            }
            for (k, e) in node.children.iter().enumerate() {
                let child = &self.nodes[e.child];
                if child.parent != Some(i) || child.depth != node.depth + 1 {
                    return Err(format!("edge {i}/{k}: broken parent link"));
                }
                if e.visits != child.visits {
                    return Err(format!(
                        "edge {i}/{k}: N_sa = {} but child N_s = {}",
                        e.visits, child.visits
                    ));
                }
                if !e.q.is_finite() {
                    return Err(format!("edge {i}/{k}: non-finite Q"));
                }
                if e.visits > 0 {
                    let mean = e.return_sum / e.visits as f64;
                    if (e.q - mean).abs() > 1e-9 * mean.abs().max(1.0) {
                        return Err(format!("edge {i}/{k}: Q {} differs from mean {mean}", e.q));
                    }
                }
            }
        }
        Ok(())
    }
}
