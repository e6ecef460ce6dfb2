//! Run configuration in a line-oriented `key = value` format.
//!
//! ```text
//! # blind cartpole with a modest budget
//! env = cartpole
//! lambda = 0.5
//! seed = 1
//! ```
//!
//! Blank lines and `#` comments are ignored; there are no sections. Values
//! given on the command line are applied afterwards through the same setter,
//! so they obey the same validation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::envs::{EnvSpec, ObsMode};
use crate::nn::AdamConfig;
use crate::policy::{OptionMode, PolicyShape};
use crate::trainer::TrainSettings;

/// Where a bad value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override,
    Resolved,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Override => f.write_str("command line"),
            Origin::Resolved => f.write_str("configuration"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{origin}: malformed line `{text}` (expected `key = value`)")]
    Malformed { origin: Origin, text: String },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: Origin, key: String },
    #[error("{origin}: invalid value for `{key}`: {reason}")]
    InvalidValue {
        origin: Origin,
        key: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    CartPole,
    Rooms,
    OracleMaze,
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cartpole" => Ok(EnvKind::CartPole),
            "rooms" => Ok(EnvKind::Rooms),
            "oracle-maze" => Ok(EnvKind::OracleMaze),
            other => Err(format!(
                "unknown environment `{other}` (cartpole, rooms, oracle-maze)"
            )),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::Rooms => "rooms",
            EnvKind::OracleMaze => "oracle-maze",
        })
    }
}

/// Every knob of a training run. Representation sizes left as `None`
/// take the per-environment defaults of [`TrainConfig::sizes`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub obs_mode: ObsMode,
    pub k: usize,
    pub room_size: usize,
    pub maze_size: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub n_x: Option<usize>,
    pub n_y: Option<usize>,
    pub n_gru: Option<usize>,
    pub discrete: bool,
    pub k_options: usize,
    pub option_recurrent: bool,
    pub force_full_obs: bool,
    pub lr: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub iterations: usize,
    pub eval_episodes: usize,
    pub greedy_eval: bool,
    pub entropy_coef: f64,
    pub baseline_decay: f64,
    pub lambda_warmup: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub sweep_lambdas: Vec<f64>,
    pub sweep_seeds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            env: EnvKind::CartPole,
            obs_mode: ObsMode::Blind,
            k: 2,
            room_size: 5,
            maze_size: 9,
            lambda: 0.5,
            epsilon: 0.0,
            gamma: 0.99,
            n_x: None,
            n_y: None,
            n_gru: None,
            discrete: false,
            k_options: 9,
            option_recurrent: true,
            force_full_obs: false,
            lr: adam.lr,
            clip_norm: adam.clip_norm,
            batch: 16,
            iterations: 1000,
            eval_episodes: 100,
            greedy_eval: false,
            entropy_coef: 0.0,
            baseline_decay: 0.9,
            lambda_warmup: 0,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            sweep_lambdas: vec![0.1, 0.5, 1.0, 5.0],
            sweep_seeds: 3,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`].
pub const KEYS: &[&str] = &[
    "env",
    "obs_mode",
    "k",
    "room_size",
    "maze_size",
    "lambda",
    "epsilon",
    "gamma",
    "n_x",
    "n_y",
    "n_gru",
    "option_mode",
    "k_options",
    "option_recurrent",
    "force_full_obs",
    "lr",
    "clip_norm",
    "batch",
    "iterations",
    "eval_episodes",
    "greedy_eval",
    "entropy_coef",
    "baseline_decay",
    "lambda_warmup",
    "seed",
    "out_dir",
    "sweep_lambdas",
    "sweep_seeds",
];

fn parse_value<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{value}`: {e}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

fn finite_in(value: &str, lo: f64, hi: f64, what: &str) -> Result<f64, String> {
    let v: f64 = parse_value(value)?;
    if !v.is_finite() || v < lo || v > hi {
        return Err(format!("{v} is outside {what}"));
    }
    Ok(v)
}

fn positive(value: &str) -> Result<usize, String> {
    let v: usize = parse_value(value)?;
    if v == 0 {
        return Err("must be at least 1".into());
    }
    Ok(v)
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                origin,
                key: key.to_string(),
            });
        }
        let invalid = |reason: String| ConfigError::InvalidValue {
            origin: origin.clone(),
            key: key.to_string(),
            reason,
        };
        let v = value;
        let r: Result<(), String> = (|| {
            match key {
                "env" => self.env = parse_value(v)?,
                "obs_mode" => self.obs_mode = parse_value(v)?,
                "k" => self.k = positive(v)?,
                "room_size" => {
                    let rs: usize = parse_value(v)?;
                    if rs < 3 || rs.is_multiple_of(2) {
                        return Err("room size must be odd and at least 3".into());
                    }
                    self.room_size = rs;
                }
                "maze_size" => {
                    let n: usize = parse_value(v)?;
                    if n < 5 || n.is_multiple_of(2) {
                        return Err("maze size must be odd and at least 5".into());
                    }
                    self.maze_size = n;
                }
                "lambda" => self.lambda = finite_in(v, 0.0, f64::MAX, "[0, ∞)")?,
                "epsilon" => self.epsilon = finite_in(v, 0.0, 1.0, "[0, 1]")?,
                "gamma" => self.gamma = finite_in(v, 0.0, 1.0, "[0, 1]")?,
                "n_x" => self.n_x = Some(parse_value(v)?),
                "n_y" => self.n_y = Some(parse_value(v)?),
                "n_gru" => self.n_gru = Some(positive(v)?),
                "option_mode" => {
                    self.discrete = match v {
                        "continuous" => false,
                        "discrete" => true,
                        other => {
                            return Err(format!(
                                "unknown option mode `{other}` (continuous, discrete)"
                            ))
                        }
                    }
                }
                "k_options" => self.k_options = positive(v)?,
                "option_recurrent" => self.option_recurrent = parse_bool(v)?,
                "force_full_obs" => self.force_full_obs = parse_bool(v)?,
                "lr" => {
                    self.lr = finite_in(v, 0.0, f64::MAX, "(0, ∞)")?;
                    if self.lr == 0.0 {
                        return Err("learning rate must be positive".into());
                    }
                }
                "clip_norm" => self.clip_norm = finite_in(v, 0.0, f64::MAX, "[0, ∞)")?,
                "batch" => self.batch = positive(v)?,
                "iterations" => self.iterations = parse_value(v)?,
                "eval_episodes" => self.eval_episodes = parse_value(v)?,
                "greedy_eval" => self.greedy_eval = parse_bool(v)?,
                "entropy_coef" => self.entropy_coef = finite_in(v, 0.0, f64::MAX, "[0, ∞)")?,
                "baseline_decay" => self.baseline_decay = finite_in(v, 0.0, 1.0, "[0, 1]")?,
                "lambda_warmup" => self.lambda_warmup = parse_value(v)?,
                "seed" => self.seed = parse_value(v)?,
                "out_dir" => {
                    if v.is_empty() {
                        return Err("empty path".into());
                    }
                    self.out_dir = PathBuf::from(v);
                }
                "sweep_lambdas" => {
                    let list = v
                        .split(',')
                        .map(|s| finite_in(s.trim(), 0.0, f64::MAX, "[0, ∞)"))
                        .collect::<Result<Vec<_>, _>>()?;
                    self.sweep_lambdas = list;
                }
                "sweep_seeds" => self.sweep_seeds = positive(v)?,
                _ => unreachable!("`{key}` is listed but has no setter"),
            }
            Ok(())
        })();
        r.map_err(invalid)
    }

    /// Representation sizes `(N_x, N_y, N_gru)` after per-environment
    /// defaults. `0` means the raw observation is used directly.
    pub fn sizes(&self) -> (usize, usize, usize) {
        let (n_x, n_y, n_gru) = match (self.env, self.obs_mode) {
            (EnvKind::CartPole, _) => (0, 5, 5),
            (EnvKind::Rooms, ObsMode::Blind) => (0, 20, 10),
            (EnvKind::Rooms, ObsMode::Split) => (10, 10, 10),
            (EnvKind::OracleMaze, _) => (10, 0, 5),
        };
        let n_gru = self.n_gru.unwrap_or(n_gru);
        // discrete options are scored by a dot product with y's representation
        let n_y = match self.n_y {
            Some(v) => v,
            None if self.discrete => n_gru,
            None => n_y,
        };
        (self.n_x.unwrap_or(n_x), n_y, n_gru)
    }

    pub fn option_mode(&self) -> OptionMode {
        if self.discrete {
            OptionMode::Discrete(self.k_options)
        } else {
            OptionMode::Continuous
        }
    }

    pub fn env_spec(&self) -> EnvSpec {
        match self.env {
            EnvKind::CartPole => EnvSpec::CartPole,
            EnvKind::Rooms => EnvSpec::Rooms {
                k: self.k,
                room_size: self.room_size,
                mode: self.obs_mode,
            },
            EnvKind::OracleMaze => EnvSpec::OracleMaze {
                width: self.maze_size,
                height: self.maze_size,
            },
        }
    }

    /// Policy architecture for this configuration's environment.
    pub fn policy_shape(&self) -> Result<PolicyShape, ConfigError> {
        let resolved = |reason: String| ConfigError::InvalidValue {
            origin: Origin::Resolved,
            key: "env".into(),
            reason,
        };
        let env = self
            .env_spec()
            .dual(self.epsilon)
            .map_err(|e| resolved(e.to_string()))?;
        let (n_x, n_y, n_gru) = self.sizes();
        let shape = PolicyShape {
            x_dim: env.x_dim(),
            y_dim: env.y_dim(),
            n_actions: env.num_actions(),
            n_x,
            n_y,
            n_gru,
            mode: self.option_mode(),
            option_recurrent: self.option_recurrent,
        };
        shape.validate().map_err(|e| ConfigError::InvalidValue {
            origin: Origin::Resolved,
            key: "n_y".into(),
            reason: e.to_string(),
        })?;
        Ok(shape)
    }

    pub fn train_settings(&self) -> TrainSettings {
        let mut s = TrainSettings::new(self.env_spec());
        s.epsilon = self.epsilon;
        s.lambda = self.lambda;
        s.gamma = self.gamma;
        s.batch = self.batch;
        s.adam.lr = self.lr;
        s.adam.clip_norm = self.clip_norm;
        s.baseline_decay = self.baseline_decay;
        s.entropy_coef = self.entropy_coef;
        s.force_full_obs = self.force_full_obs;
        s.lambda_warmup = self.lambda_warmup;
        s.seed = self.seed;
        s
    }

    /// Renders the configuration back into the line format.
    pub fn to_text(&self) -> String {
        let (n_x, n_y, n_gru) = self.sizes();
        let lambdas: Vec<String> = self.sweep_lambdas.iter().map(|l| l.to_string()).collect();
        let lines = [
            ("env", self.env.to_string()),
            ("obs_mode", self.obs_mode.to_string()),
            ("k", self.k.to_string()),
            ("room_size", self.room_size.to_string()),
            ("maze_size", self.maze_size.to_string()),
            ("lambda", self.lambda.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("gamma", self.gamma.to_string()),
            ("n_x", n_x.to_string()),
            ("n_y", n_y.to_string()),
            ("n_gru", n_gru.to_string()),
            (
                "option_mode",
                if self.discrete {
                    "discrete"
                } else {
                    "continuous"
                }
                .to_string(),
            ),
            ("k_options", self.k_options.to_string()),
            ("option_recurrent", self.option_recurrent.to_string()),
            ("force_full_obs", self.force_full_obs.to_string()),
            ("lr", self.lr.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("batch", self.batch.to_string()),
            ("iterations", self.iterations.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("greedy_eval", self.greedy_eval.to_string()),
            ("entropy_coef", self.entropy_coef.to_string()),
            ("baseline_decay", self.baseline_decay.to_string()),
            ("lambda_warmup", self.lambda_warmup.to_string()),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("sweep_lambdas", lambdas.join(",")),
            ("sweep_seeds", self.sweep_seeds.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Parses configuration text, then applies `overrides` in order.
pub fn parse_config(
    text: &str,
    overrides: &[(String, String)],
) -> Result<TrainConfig, ConfigError> {
    let mut config = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let origin = Origin::Line(i + 1);
        let (key, value) = match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => (k.trim(), v.trim()),
            _ => {
                return Err(ConfigError::Malformed {
                    origin,
                    text: raw.to_string(),
                })
            }
        };
        config.set(key, value, origin)?;
    }
    for (key, value) in overrides {
        config.set(key, value, Origin::Override)?;
    }
    Ok(config)
}
