//! Cooperative multi-agent Monte Carlo tree search for urban driving with a
//! learned mixture-density prior over continuous actions.
//!
//! * [`scene`]: road geometry, agents, kinematics, collisions, rewards, scenario files
//! * [`gmm`]: one-dimensional Gaussian mixtures and weighted EM
//! * [`features`]: ego-centred semantic grid and scalar history
//! * [`mdn`]: mixture density network weights and forward pass
//! * [`mcts`]: the planner
//! * [`episode`]: closed-loop plan-and-execute episodes
//! * [`datagen`]: training corpus generation
//! * [`experiment`]: batch evaluation and reports

pub mod datagen;
pub mod episode;
pub mod experiment;
pub mod features;
pub mod gmm;
pub mod mcts;
pub mod mdn;
pub mod par;
pub mod scene;
