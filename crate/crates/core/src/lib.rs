//! Budgeted Option Neural Networks.
//!
//! A hierarchical recurrent policy that always sees a cheap observation `x`
//! and may pay a cost `λ` to acquire a richer observation `y`. Acquiring `y`
//! starts a new option (a latent vector); between acquisitions the actor runs
//! open-loop on `x` alone. Training is recurrent REINFORCE on the reward
//! minus the acquisition cost.
//!
//! Modules, bottom-up:
//! - [`diffcore`]: reverse-mode differentiation tape.
//! - [`nn`]: linear/GRU layers, Adam with clipping, parameter files.
//! - [`envs`]: CartPole, k×k rooms, oracle maze, bandit.
//! - [`policy`]: acquisition, option and actor models; rollouts.
//! - [`trainer`]: returns, baselines, policy-gradient updates, evaluation.
//! - [`harness`]: configuration, run orchestration, CSV/JSONL/SVG artifacts.

pub mod diffcore;
pub mod envs;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used everywhere; stable across platforms and releases.
pub type BonnRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> BonnRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An independent stream derived from `seed`.
pub fn rng_from_stream(seed: u64, stream: u64) -> BonnRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
