//! Budgeted recurrent policy gradient.
//!
//! Each update samples `M` episodes, builds the surrogate
//!
//! ```text
//! L = −Σ_t [log P(a_t) + log P(σ_t) + log P(i_t)] · (R*_t − b*_t)
//! ```
//!
//! per episode (the option-index term only in discrete mode), averages the
//! gradients over the batch in episode order, and applies one Adam step.
//! `R*_t` is the discounted return of the augmented reward `r_t − λσ_t`.

use std::ops::ControlFlow;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::diffcore::{DiffError, GradBuffer, GradSink};
use crate::envs::{EnvError, EnvSpec};
use crate::nn::{AdamConfig, AdamState, NnError};
use crate::policy::{EpisodeTrace, PolicyError, PolicyParams, Rollout, StepOptions};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("non-finite surrogate loss at episode step {0}")]
    NonFiniteLoss(usize),
    #[error("training diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: usize,
        last_good: Option<Box<TrainReport>>,
        source: NnError,
    },
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error("worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Plain and augmented discounted returns of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnProfile {
    pub plain: Vec<f64>,
    pub augmented: Vec<f64>,
    pub gamma: f64,
    pub lambda: f64,
}

fn discounted(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `R_t = r_t + γR_{t+1}` and `R*_t = (r_t − λσ_t) + γR*_{t+1}`, with `R_T = 0`.
pub fn compute_returns(trace: &EpisodeTrace, gamma: f64, lambda: f64) -> ReturnProfile {
    let plain = discounted(&trace.rewards(), gamma);
    let augmented = if lambda == 0.0 {
        plain.clone()
    } else {
        let costed: Vec<f64> = trace
            .steps
            .iter()
            .map(|s| s.reward - if s.sigma { lambda } else { 0.0 })
            .collect();
        discounted(&costed, gamma)
    };
    ReturnProfile {
        plain,
        augmented,
        gamma,
        lambda,
    }
}

/// Per-time-index exponential moving average of `R*_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub values: Vec<f64>,
    pub visits: Vec<u64>,
    pub decay: f64,
}

impl BaselineState {
    pub fn new(decay: f64) -> Self {
        BaselineState {
            values: Vec::new(),
            visits: Vec::new(),
            decay,
        }
    }

    /// Returns the baselines for the episode's steps as they stand, then
    /// folds in its returns. A never-visited index reads as 0 and is
    /// initialised to the first return seen there.
    pub fn update_and_fetch(&mut self, profile: &ReturnProfile) -> Vec<f64> {
        let n = profile.augmented.len();
        if self.values.len() < n {
            self.values.resize(n, 0.0);
            self.visits.resize(n, 0);
        }
        let fetched = self.values[..n].to_vec();
        for (t, &ret) in profile.augmented.iter().enumerate() {
            self.values[t] = if self.visits[t] == 0 {
                ret
            } else {
                self.decay * self.values[t] + (1.0 - self.decay) * ret
            };
            self.visits[t] += 1;
        }
        fetched
    }
}

/// Accumulates the gradient of the episode's surrogate loss into `sink`.
///
/// Advantages enter as constants. `entropy_coef > 0` subtracts an entropy
/// bonus (needs rollouts recorded with entropy nodes).
pub fn episode_gradient<S: GradSink + ?Sized>(
    rollout: &mut Rollout,
    profile: &ReturnProfile,
    baselines: &[f64],
    entropy_coef: f64,
    sink: &mut S,
) -> Result<()> {
    let mut terms = Vec::with_capacity(rollout.trace.steps.len() * 4);
    for (t, step) in rollout.trace.steps.iter().enumerate() {
        let advantage = profile.augmented[t] - baselines.get(t).copied().unwrap_or(0.0);
        if !advantage.is_finite() {
            return Err(TrainError::NonFiniteLoss(t));
        }
        terms.push((step.log_p_action, -advantage));
        if let Some(v) = step.log_p_sigma {
            terms.push((v, -advantage));
        }
        if let Some(v) = step.log_p_option {
            terms.push((v, -advantage));
        }
        if entropy_coef != 0.0 {
            if let Some(e) = step.entropy {
                terms.push((e, -entropy_coef));
            }
        }
    }
    let loss = rollout.tape.combine(&terms)?;
    if !rollout.tape.scalar(loss).is_finite() {
        return Err(TrainError::NonFiniteLoss(rollout.trace.length));
    }
    rollout.tape.backward(loss, sink)?;
    Ok(())
}

/// Learning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub env: EnvSpec,
    pub epsilon: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub baseline_decay: f64,
    pub entropy_coef: f64,
    pub force_full_obs: bool,
    /// Updates over which the cost ramps linearly from 0 up to `lambda`;
    /// 0 applies the full cost from the start.
    pub lambda_warmup: usize,
    pub seed: u64,
    /// Parallel episode workers; 0 means the rayon default.
    pub workers: usize,
}

impl TrainSettings {
    pub fn new(env: EnvSpec) -> Self {
        TrainSettings {
            env,
            epsilon: 0.0,
            lambda: 0.0,
            gamma: 0.99,
            batch: 16,
            adam: AdamConfig::default(),
            baseline_decay: 0.9,
            entropy_coef: 0.0,
            force_full_obs: false,
            lambda_warmup: 0,
            seed: 0,
            workers: 0,
        }
    }

    /// Cost level in force at update `iteration`.
    pub fn lambda_at(&self, iteration: usize) -> f64 {
        if iteration >= self.lambda_warmup {
            self.lambda
        } else {
            self.lambda * iteration as f64 / self.lambda_warmup as f64
        }
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            force_full_obs: self.force_full_obs,
            with_entropy: self.entropy_coef != 0.0,
            greedy: false,
            max_steps: None,
        }
    }
}

/// Seed of training episode `index` for root seed `root`.
pub fn train_episode_seed(root: u64, index: u64) -> u64 {
    (root << 32).wrapping_add(index)
}

/// Seed of evaluation episode `index`; disjoint from training seeds.
pub fn eval_episode_seed(root: u64, index: u64) -> u64 {
    (root << 32).wrapping_add(1 << 31).wrapping_add(index)
}

/// Metrics of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iteration: usize,
    /// Mean undiscounted episode reward.
    pub mean_return: f64,
    /// Mean undiscounted episode reward minus `λC`.
    pub mean_aug_return: f64,
    /// Acquisitions over steps, pooled over the batch.
    pub obs_fraction: f64,
    pub mean_length: f64,
    pub grad_norm: f64,
    pub elapsed_s: f64,
}

fn summarize(traces: &[&EpisodeTrace], lambda: f64) -> (f64, f64, f64, f64) {
    let n = traces.len() as f64;
    let total_steps: usize = traces.iter().map(|t| t.length).sum();
    let total_cost: usize = traces.iter().map(|t| t.cost).sum();
    let mean_return = traces.iter().map(|t| t.total_reward).sum::<f64>() / n;
    let mean_aug = traces
        .iter()
        .map(|t| t.total_reward - lambda * t.cost as f64)
        .sum::<f64>()
        / n;
    let obs_fraction = if total_steps == 0 {
        0.0
    } else {
        total_cost as f64 / total_steps as f64
    };
    (mean_return, mean_aug, obs_fraction, total_steps as f64 / n)
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    let workers = if workers == 0 {
        std::env::var("BONN_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    } else {
        workers
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TrainError::Pool(e.to_string()))
}

/// Owns a policy and everything needed to keep improving it.
pub struct Trainer {
    pub settings: TrainSettings,
    pub policy: PolicyParams,
    pub adam: AdamState,
    pub baseline: BaselineState,
    pub iteration: usize,
    episodes_drawn: u64,
    started: Instant,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(settings: TrainSettings, policy: PolicyParams) -> Result<Self> {
        // fail early on a bad environment description
        settings.env.dual(settings.epsilon)?;
        let adam = AdamState::new(&policy.store, settings.adam);
        let baseline = BaselineState::new(settings.baseline_decay);
        let pool = build_pool(settings.workers)?;
        Ok(Trainer {
            settings,
            policy,
            adam,
            baseline,
            iteration: 0,
            episodes_drawn: 0,
            started: Instant::now(),
            pool,
        })
    }

    fn sample_batch(&self, first: u64) -> Result<Vec<Rollout>> {
        let opts = self.settings.step_options();
        let policy = &self.policy;
        let settings = &self.settings;
        self.pool.install(|| {
            (0..settings.batch as u64)
                .into_par_iter()
                .map(|i| {
                    let mut env = settings.env.dual(settings.epsilon)?;
                    let seed = train_episode_seed(settings.seed, first + i);
                    Ok(policy.rollout(&mut env, seed, &opts)?)
                })
                .collect()
        })
    }

    /// One update: sample, compute returns and baselines, average the
    /// gradients in episode order, and step the optimizer.
    pub fn iterate(&mut self) -> Result<TrainReport> {
        let first = self.episodes_drawn;
        let mut batch = self.sample_batch(first)?;
        self.episodes_drawn += self.settings.batch as u64;

        let (gamma, lambda) = (self.settings.gamma, self.settings.lambda_at(self.iteration));
        let prepared: Vec<(ReturnProfile, Vec<f64>)> = batch
            .iter()
            .map(|r| {
                let profile = compute_returns(&r.trace, gamma, lambda);
                let baselines = self.baseline.update_and_fetch(&profile);
                (profile, baselines)
            })
            .collect();

        let template = GradBuffer::zeros_like(self.policy.store.tensors());
        let entropy_coef = self.settings.entropy_coef;
        let grads: Vec<Result<GradBuffer>> = self.pool.install(|| {
            batch
                .par_iter_mut()
                .zip(prepared.par_iter())
                .map(|(rollout, (profile, baselines))| {
                    let mut g = template.clone();
                    episode_gradient(rollout, profile, baselines, entropy_coef, &mut g)?;
                    Ok(g)
                })
                .collect()
        });
        let scale = 1.0 / self.settings.batch as f64;
        let mut total = template;
        for g in grads {
            total.add_scaled(&g?, scale);
        }
        for (k, g) in total.grads.iter().enumerate() {
            self.policy.store.get_mut(k).grad_mut().copy_from_slice(g);
        }
        let traces: Vec<&EpisodeTrace> = batch.iter().map(|r| &r.trace).collect();
        let (mean_return, mean_aug_return, obs_fraction, mean_length) = summarize(&traces, lambda);
        let iteration = self.iteration;
        let grad_norm =
            self.adam
                .step(&mut self.policy.store)
                .map_err(|source| TrainError::Diverged {
                    iteration,
                    last_good: None,
                    source,
                })?;
        self.iteration += 1;
        Ok(TrainReport {
            iteration,
            mean_return,
            mean_aug_return,
            obs_fraction,
            mean_length,
            grad_norm,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Runs up to `iterations` updates, handing each report to `on_report`,
    /// which may stop training early.
    pub fn train<F>(&mut self, iterations: usize, mut on_report: F) -> Result<Vec<TrainReport>>
    where
        F: FnMut(&TrainReport, &PolicyParams) -> ControlFlow<()>,
    {
        let mut reports: Vec<TrainReport> = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let report = match self.iterate() {
                Ok(r) => r,
                Err(TrainError::Diverged {
                    iteration, source, ..
                }) => {
                    return Err(TrainError::Diverged {
                        iteration,
                        last_good: reports.last().cloned().map(Box::new),
                        source,
                    })
                }
                Err(e) => return Err(e),
            };
            let flow = on_report(&report, &self.policy);
            reports.push(report);
            if flow.is_break() {
                break;
            }
        }
        Ok(reports)
    }
}

/// Aggregate metrics of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean_return: f64,
    pub obs_fraction: f64,
    pub mean_length: f64,
    pub traces: Vec<EpisodeTrace>,
}

impl EvalResult {
    /// Share of episodes whose last reward was `goal_reward`.
    pub fn goal_rate(&self, goal_reward: f64) -> f64 {
        let hits = self
            .traces
            .iter()
            .filter(|t| t.reached_goal(goal_reward))
            .count();
        hits as f64 / self.traces.len() as f64
    }
}

/// Runs `n_episodes` evaluation episodes on seeds disjoint from training.
pub fn evaluate(
    policy: &PolicyParams,
    env: &EnvSpec,
    epsilon: f64,
    n_episodes: usize,
    seed: u64,
    options: &StepOptions,
) -> Result<EvalResult> {
    if n_episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    let traces = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut dual = env.dual(epsilon)?;
            Ok(policy
                .rollout(&mut dual, eval_episode_seed(seed, i), options)?
                .trace)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&EpisodeTrace> = traces.iter().collect();
    let (mean_return, _, obs_fraction, mean_length) = summarize(&refs, 0.0);
    Ok(EvalResult {
        mean_return,
        obs_fraction,
        mean_length,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tape;
    use crate::policy::StepTrace;

    fn trace(rewards: &[f64], sigmas: &[bool]) -> EpisodeTrace {
        let mut tape = Tape::new();
        let dummy = tape.constant(&[0.0]);
        let steps = rewards
            .iter()
            .zip(sigmas)
            .enumerate()
            .map(|(t, (&reward, &sigma))| StepTrace {
                t,
                sigma,
                acquisition_probability: 0.5,
                log_p_sigma: None,
                action: 0,
                action_probabilities: vec![1.0],
                log_p_action: dummy,
                option_index: None,
                log_p_option: None,
                entropy: None,
                reward,
                option_snapshot: None,
                position: None,
                region: None,
                goal_annotation: -1,
            })
            .collect();
        EpisodeTrace::new(steps, None)
    }

    #[test]
    fn lambda_warmup_ramp() {
        let mut s = TrainSettings::new(EnvSpec::CartPole);
        s.lambda = 2.0;
        assert_eq!(s.lambda_at(0), 2.0);
        s.lambda_warmup = 4;
        assert_eq!(s.lambda_at(0), 0.0);
        assert_eq!(s.lambda_at(1), 0.5);
        assert_eq!(s.lambda_at(4), 2.0);
        assert_eq!(s.lambda_at(100), 2.0);
    }

    #[test]
    fn augmented_return_arithmetic() {
        let p = compute_returns(&trace(&[1.0, 1.0], &[true, false]), 1.0, 0.5);
        assert_eq!(p.augmented, vec![1.5, 1.0]);
        assert_eq!(p.plain, vec![2.0, 1.0]);
    }

    #[test]
    fn geometric_sum() {
        let p = compute_returns(&trace(&[1.0, 1.0, 1.0], &[false, true, true]), 0.9, 0.0);
        assert!((p.augmented[0] - 2.71).abs() < 1e-12);
        assert_eq!(p.augmented, p.plain);
    }

    #[test]
    fn pure_cost() {
        let p = compute_returns(&trace(&[0.0; 7], &[true; 7]), 1.0, 1.0);
        assert_eq!(p.augmented[0], -7.0);
    }

    #[test]
    fn baseline_first_visit_rule() {
        let mut b = BaselineState::new(0.9);
        let p = compute_returns(&trace(&[5.0], &[false]), 1.0, 0.0);
        assert_eq!(b.update_and_fetch(&p), vec![0.0]);
        assert_eq!(b.update_and_fetch(&p), vec![5.0]);
    }

    #[test]
    fn baseline_recurrence() {
        let mut b = BaselineState::new(0.9);
        b.update_and_fetch(&compute_returns(&trace(&[1.0], &[false]), 1.0, 0.0));
        assert_eq!(b.values, vec![1.0]);
        b.update_and_fetch(&compute_returns(&trace(&[0.0], &[false]), 1.0, 0.0));
        assert!((b.values[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn baseline_converges_on_constant_returns() {
        let mut b = BaselineState::new(0.9);
        let p = compute_returns(&trace(&[2.0, 3.0], &[false, false]), 0.9, 0.0);
        let mut last = vec![];
        for _ in 0..5 {
            last = b.update_and_fetch(&p);
        }
        for (bv, r) in last.iter().zip(&p.augmented) {
            assert!((r - bv).abs() < 1e-12);
        }
    }

    #[test]
    fn seeds_are_disjoint() {
        assert_ne!(train_episode_seed(3, 0), eval_episode_seed(3, 0));
        assert_eq!(train_episode_seed(3, 5), (3 << 32) + 5);
    }
}
