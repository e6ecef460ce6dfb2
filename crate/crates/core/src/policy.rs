//! The BONN policy: acquisition model, option model and actor model.
//!
//! At every step the acquisition model draws `σ_t ~ Bernoulli(sigmoid(f_acq(h_{t−1}, x_t)))`.
//! When `σ_t = 1` the high-level observation is fetched and a new option
//! state is computed (by `gru_opt`, or by sampling one of `K` learned
//! embeddings in discrete mode), and the actor state is reset to it.
//! Otherwise the actor state is advanced by `gru_act` from `x_t` alone.
//! Actions are drawn from `softmax(f_act(h_t))`.
//!
//! Random draws within a step are consumed in a fixed order: `σ` (skipped
//! when acquisition is forced), then the option index (discrete mode, only
//! when `σ = 1`), then the action. Each draw is one uniform in `[0, 1)`
//! mapped through the inverse CDF.

use rand::Rng;
use thiserror::Error;

use crate::diffcore::{DiffError, Tape, Var};
use crate::envs::{Cell, DualEnv, DualObservation, EnvError};
use crate::nn::{GruParams, LinearParams, NnError, ParamStore};
use crate::{rng_from_stream, BonnRng};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("option model called without a high-level observation")]
    MissingObservation,
    #[error("actor told to start an option but no option state was given")]
    MissingOption,
    #[error("policy configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// How options are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionMode {
    /// Option state is a continuous vector computed by `gru_opt`.
    Continuous,
    /// One of `K` learned embeddings, sampled from a softmax over scores.
    Discrete(usize),
}

/// Architecture sizes. A representation size of 0 means the raw observation
/// is fed through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyShape {
    pub x_dim: usize,
    pub y_dim: usize,
    pub n_actions: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub n_gru: usize,
    pub mode: OptionMode,
    pub option_recurrent: bool,
}

impl PolicyShape {
    pub fn x_repr_dim(&self) -> usize {
        if self.n_x == 0 {
            self.x_dim
        } else {
            self.n_x
        }
    }

    pub fn y_repr_dim(&self) -> usize {
        if self.n_y == 0 {
            self.y_dim
        } else {
            self.n_y
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_gru == 0 {
            return Err(PolicyError::Config("GRU size must be at least 1".into()));
        }
        if self.n_actions == 0 {
            return Err(PolicyError::Config("environment has no actions".into()));
        }
        if let OptionMode::Discrete(k) = self.mode {
            if k == 0 {
                return Err(PolicyError::Config(
                    "discrete mode needs at least one option".into(),
                ));
            }
            if self.y_repr_dim() != self.n_gru {
                return Err(PolicyError::Config(format!(
                    "discrete options score embeddings against y by dot product: y representation size {} must equal GRU size {}",
                    self.y_repr_dim(),
                    self.n_gru
                )));
            }
        }
        Ok(())
    }
}

/// All learned weights of a BONN policy plus their layout in the store.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub store: ParamStore,
    pub repr_x: Option<LinearParams>,
    pub repr_y: Option<LinearParams>,
    pub f_acq: LinearParams,
    pub gru_opt: Option<GruParams>,
    pub gru_act: GruParams,
    pub f_act: LinearParams,
    pub option_embeddings: Option<usize>,
}

impl PolicyParams {
    pub fn init(shape: PolicyShape, rng: &mut BonnRng) -> Result<Self> {
        shape.validate()?;
        let mut store = ParamStore::new();
        let repr_x = (shape.n_x > 0)
            .then(|| LinearParams::init(&mut store, "repr_x", shape.x_dim, shape.n_x, rng));
        let repr_y = (shape.n_y > 0)
            .then(|| LinearParams::init(&mut store, "repr_y", shape.y_dim, shape.n_y, rng));
        let (xr, yr, n) = (shape.x_repr_dim(), shape.y_repr_dim(), shape.n_gru);
        let f_acq = LinearParams::init(&mut store, "f_acq", n + xr, 1, rng);
        let (gru_opt, option_embeddings) = match shape.mode {
            OptionMode::Continuous => (
                Some(GruParams::init(&mut store, "gru_opt", xr + yr, n, rng)),
                None,
            ),
            OptionMode::Discrete(k) => {
                let bound = 1.0 / (n as f64).sqrt();
                let values = (0..k * n).map(|_| rng.gen_range(-bound..=bound)).collect();
                let emb = crate::diffcore::Tensor::matrix(k, n, values)?;
                (None, Some(store.add("option_embeddings", emb)))
            }
        };
        let gru_act = GruParams::init(&mut store, "gru_act", xr, n, rng);
        let f_act = LinearParams::init(&mut store, "f_act", n, shape.n_actions, rng);
        Ok(PolicyParams {
            shape,
            store,
            repr_x,
            repr_y,
            f_acq,
            gru_opt,
            gru_act,
            f_act,
            option_embeddings,
        })
    }

    /// Replaces the weights with ones read from a parameter file. Names and
    /// shapes must match this architecture.
    pub fn load_store(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(PolicyError::Config(format!(
                "parameter file has {} blocks, architecture needs {}",
                store.len(),
                self.store.len()
            )));
        }
        for ((na, a), (nb, b)) in self.store.iter().zip(store.iter()) {
            if na != nb || a.dims() != b.dims() {
                return Err(PolicyError::Config(format!(
                    "parameter block `{nb}` {:?} does not match `{na}` {:?}",
                    b.dims(),
                    a.dims()
                )));
            }
        }
        self.store = store;
        Ok(())
    }

    /// Sets every weight to zero.
    pub fn zero_all(&mut self) {
        for t in self.store.tensors_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn represent_x(&self, tape: &mut Tape, x: &[f64]) -> Result<Var> {
        let x = tape.constant(x);
        match &self.repr_x {
            Some(lin) => {
                let z = lin.forward(&self.store, tape, x)?;
                Ok(tape.relu(z))
            }
            None => Ok(x),
        }
    }

    pub fn represent_y(&self, tape: &mut Tape, y: &[f64]) -> Result<Var> {
        let y = tape.constant(y);
        match &self.repr_y {
            Some(lin) => {
                let z = lin.forward(&self.store, tape, y)?;
                Ok(tape.relu(z))
            }
            None => Ok(y),
        }
    }

    /// Logit of `P(σ_t = 1)` from the previous actor state and `x_t`.
    pub fn acquisition_logit(&self, tape: &mut Tape, h_prev: Var, x_repr: Var) -> Result<Var> {
        let input = tape.concat(h_prev, x_repr)?;
        Ok(self.f_acq.forward(&self.store, tape, input)?)
    }

    /// `P(σ_t = 1) = sigmoid(f_acq(h_{t−1}, x_t))`.
    pub fn acquisition_probability(
        &self,
        tape: &mut Tape,
        h_prev: Var,
        x_repr: Var,
    ) -> Result<Var> {
        let logit = self.acquisition_logit(tape, h_prev, x_repr)?;
        Ok(tape.sigmoid(logit))
    }

    /// New continuous option state `gru_opt([x; y], o_last)`.
    pub fn option_step(
        &self,
        tape: &mut Tape,
        x_repr: Var,
        y_repr: Option<Var>,
        o_last: Var,
    ) -> Result<Var> {
        let y_repr = y_repr.ok_or(PolicyError::MissingObservation)?;
        let gru = self
            .gru_opt
            .as_ref()
            .ok_or_else(|| PolicyError::Config("option_step needs continuous mode".into()))?;
        let input = tape.concat(x_repr, y_repr)?;
        let hidden = if self.shape.option_recurrent {
            o_last
        } else {
            tape.constant(&vec![0.0; self.shape.n_gru])
        };
        gru.step(&self.store, tape, input, hidden)
            .map_err(Into::into)
    }

    /// Option-index distribution: softmax of `o^k · y` over the `K` embeddings.
    pub fn option_distribution(&self, tape: &mut Tape, y_repr: Var) -> Result<Var> {
        let emb = self
            .option_embeddings
            .ok_or_else(|| PolicyError::Config("option_distribution needs discrete mode".into()))?;
        let emb = self.store.on(tape, emb);
        let scores = tape.affine(emb, None, y_repr)?;
        Ok(tape.softmax(scores)?)
    }

    /// Samples an option index; returns `(index, probabilities, chosen embedding)`.
    pub fn select_option_discrete(
        &self,
        tape: &mut Tape,
        y_repr: Var,
        rng: &mut BonnRng,
    ) -> Result<(usize, Var, Var)> {
        let probs = self.option_distribution(tape, y_repr)?;
        let index = sample_index(tape.value(probs), rng.gen());
        self.pick_option(tape, probs, index)
    }

    fn pick_option(&self, tape: &mut Tape, probs: Var, index: usize) -> Result<(usize, Var, Var)> {
        let emb = self
            .store
            .on(tape, self.option_embeddings.expect("checked above"));
        let option = tape.row(emb, index)?;
        Ok((index, probs, option))
    }

    /// `h_t = o_t` when `σ_t = 1`, else `gru_act(x_t, h_{t−1})`.
    pub fn actor_step(
        &self,
        tape: &mut Tape,
        sigma: bool,
        x_repr: Var,
        h_prev: Var,
        option: Option<Var>,
    ) -> Result<Var> {
        if sigma {
            option.ok_or(PolicyError::MissingOption)
        } else {
            Ok(self.gru_act.step(&self.store, tape, x_repr, h_prev)?)
        }
    }

    /// `softmax(f_act(h_t))`.
    pub fn action_distribution(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let logits = self.f_act.forward(&self.store, tape, h)?;
        Ok(tape.softmax(logits)?)
    }

    /// Zero initial option and actor states.
    pub fn initial_state(&self, tape: &mut Tape) -> PolicyState {
        let zeros = vec![0.0; self.shape.n_gru];
        let o_last = tape.constant(&zeros);
        let h = tape.constant(&zeros);
        PolicyState { o_last, h, t: 0 }
    }

    /// One step of the inference procedure. `fetch_y` is only called when the
    /// high-level observation is acquired.
    pub fn policy_step<F>(
        &self,
        tape: &mut Tape,
        state: &PolicyState,
        obs: &DualObservation,
        fetch_y: F,
        rng: &mut BonnRng,
        options: &StepOptions,
    ) -> Result<(usize, StepTrace, PolicyState)>
    where
        F: FnOnce() -> Vec<f64>,
    {
        let x_repr = self.represent_x(tape, &obs.x)?;
        let (sigma, log_p_sigma, acq_prob, sigma_entropy) = if options.force_full_obs {
            (true, None, 1.0, None)
        } else {
            let logit = self.acquisition_logit(tape, state.h, x_repr)?;
            let p = crate::diffcore::sigmoid(tape.scalar(logit));
            let u: f64 = rng.gen();
            let sigma = if options.greedy { p > 0.5 } else { u < p };
            let signed = if sigma {
                logit
            } else {
                tape.scale(logit, -1.0)
            };
            let log_p = tape.log_sigmoid(signed);
            let entropy = if options.with_entropy {
                let p1 = tape.sigmoid(logit);
                let p0 = tape.one_minus(p1);
                let dist = tape.concat(p0, p1)?;
                Some(tape.entropy(dist)?)
            } else {
                None
            };
            (sigma, Some(log_p), p, entropy)
        };

        let mut option_index = None;
        let mut log_p_option = None;
        let mut option_snapshot = None;
        let mut option_entropy = None;
        let mut o_last = state.o_last;
        let option = if sigma {
            let y = fetch_y();
            let y_repr = self.represent_y(tape, &y)?;
            let o = match self.shape.mode {
                OptionMode::Continuous => {
                    self.option_step(tape, x_repr, Some(y_repr), state.o_last)?
                }
                OptionMode::Discrete(_) if options.greedy => {
                    let probs = self.option_distribution(tape, y_repr)?;
                    let i = argmax(tape.value(probs));
                    let (i, probs, o) = self.pick_option(tape, probs, i)?;
                    option_index = Some(i);
                    log_p_option = Some(tape.pick_log_prob(probs, i)?);
                    o
                }
                OptionMode::Discrete(_) => {
                    let (i, probs, o) = self.select_option_discrete(tape, y_repr, rng)?;
                    option_index = Some(i);
                    log_p_option = Some(tape.pick_log_prob(probs, i)?);
                    if options.with_entropy {
                        option_entropy = Some(tape.entropy(probs)?);
                    }
                    o
                }
            };
            option_snapshot = Some(tape.value(o).to_vec());
            o_last = o;
            Some(o)
        } else {
            None
        };
        let h = self.actor_step(tape, sigma, x_repr, state.h, option)?;
        let dist = self.action_distribution(tape, h)?;
        let u: f64 = rng.gen();
        let action = if options.greedy {
            argmax(tape.value(dist))
        } else {
            sample_index(tape.value(dist), u)
        };
        let log_p_action = tape.pick_log_prob(dist, action)?;
        let entropy = if options.with_entropy {
            let a = tape.entropy(dist)?;
            let terms: Vec<(Var, f64)> = [Some(a), sigma_entropy, option_entropy]
                .into_iter()
                .flatten()
                .map(|v| (v, 1.0))
                .collect();
            Some(tape.combine(&terms)?)
        } else {
            None
        };
        let trace = StepTrace {
            t: state.t,
            sigma,
            acquisition_probability: acq_prob,
            log_p_sigma,
            action,
            action_probabilities: tape.value(dist).to_vec(),
            log_p_action,
            option_index,
            log_p_option,
            entropy,
            reward: 0.0,
            option_snapshot,
            position: None,
            region: None,
            goal_annotation: -1,
        };
        let next = PolicyState {
            o_last,
            h,
            t: state.t + 1,
        };
        Ok((action, trace, next))
    }

    /// Runs one episode from a fresh reset of `env` with the given seed.
    pub fn rollout(&self, env: &mut DualEnv, seed: u64, options: &StepOptions) -> Result<Rollout> {
        let mut tape = Tape::new();
        let mut rng = rng_from_stream(seed, 2);
        let mut obs = env.reset(seed);
        let mut state = self.initial_state(&mut tape);
        let cap = options.max_steps.unwrap_or(usize::MAX).min(env.max_steps());
        let mut steps = Vec::new();
        loop {
            let inner = env.inner();
            let position = inner.position();
            let region = inner.region();
            let annotation = inner.goal_annotation();
            let (action, mut step, next) = self.policy_step(
                &mut tape,
                &state,
                &obs,
                || env.high_level(),
                &mut rng,
                options,
            )?;
            step.position = position;
            step.region = region;
            step.goal_annotation = annotation;
            let (next_obs, reward, done) = env.step(action)?;
            step.reward = reward;
            steps.push(step);
            state = next;
            obs = next_obs;
            if done || steps.len() >= cap {
                break;
            }
        }
        let trace = EpisodeTrace::new(steps, env.inner().position());
        Ok(Rollout { tape, trace })
    }
}

/// Per-step switches for [`PolicyParams::policy_step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOptions {
    /// Fix `σ_t = 1` every step (the full-observation recurrent comparator).
    pub force_full_obs: bool,
    /// Record entropy nodes for optional regularisation.
    pub with_entropy: bool,
    /// Take the most likely `σ`, option and action instead of sampling.
    pub greedy: bool,
    /// Extra cap on episode length, below the environment's own.
    pub max_steps: Option<usize>,
}

/// Recurrent state carried between steps, as nodes on the episode tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyState {
    /// Most recently computed option state.
    pub o_last: Var,
    /// Actor state.
    pub h: Var,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub t: usize,
    pub sigma: bool,
    pub acquisition_probability: f64,
    /// `None` when acquisition was forced.
    pub log_p_sigma: Option<Var>,
    pub action: usize,
    pub action_probabilities: Vec<f64>,
    pub log_p_action: Var,
    pub option_index: Option<usize>,
    pub log_p_option: Option<Var>,
    pub entropy: Option<Var>,
    pub reward: f64,
    pub option_snapshot: Option<Vec<f64>>,
    /// Agent cell before the action, for grid environments.
    pub position: Option<Cell>,
    pub region: Option<usize>,
    pub goal_annotation: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<StepTrace>,
    /// Undiscounted sum of environment rewards.
    pub total_reward: f64,
    /// Number of acquisitions `C = Σ σ_t`.
    pub cost: usize,
    pub length: usize,
    /// Agent cell after the last action, for grid environments.
    pub final_position: Option<Cell>,
}

impl EpisodeTrace {
    pub fn new(steps: Vec<StepTrace>, final_position: Option<Cell>) -> Self {
        let total_reward = steps.iter().map(|s| s.reward).sum();
        let cost = steps.iter().filter(|s| s.sigma).count();
        let length = steps.len();
        EpisodeTrace {
            steps,
            total_reward,
            cost,
            length,
            final_position,
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn sigmas(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.sigma).collect()
    }

    /// Whether the final reward was the goal bonus of a grid task.
    pub fn reached_goal(&self, goal_reward: f64) -> bool {
        self.steps.last().is_some_and(|s| s.reward == goal_reward)
    }
}

/// An episode together with the tape holding its computation.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub tape: Tape,
    pub trace: EpisodeTrace,
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector with a uniform `u ∈ [0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total: take the last positive entry
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(probs.len() - 1)
}
