//! Run orchestration and artifacts.
//!
//! A training run writes into its output directory:
//!
//! | file | content |
//! |------|---------|
//! | `config.txt` | the resolved configuration |
//! | `metrics.csv` | one row per update |
//! | `params.bin` | final weights |
//! | `eval.csv` | one row per evaluation episode |
//! | `traces.jsonl` | one JSON object per evaluation episode |
//! | `options.csv` | option vectors at every acquisition |
//!
//! Everything except the `elapsed_s` column is a pure function of the
//! configuration.

mod config;
mod pareto;
mod render;

pub use config::{parse_config, ConfigError, EnvKind, Origin, TrainConfig, KEYS};
pub use pareto::{excluded_flags, pareto_front, pareto_indices, spearman, ParetoPoint};
pub use render::{render_trajectory_svg, RenderError, OPTION_PALETTE};

use std::fs;
use std::io::{self, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::envs::{Cell, GridGeometry, RoomsWorld};
use crate::nn::{NnError, ParamStore};
use crate::policy::{EpisodeTrace, PolicyError, PolicyParams};
use crate::trainer::{self, eval_episode_seed, EvalResult, TrainError, TrainReport, Trainer};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Params { path: PathBuf, source: NnError },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

impl HarnessError {
    /// Process exit status: 1 for configuration problems, 2 for everything
    /// that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Reads a configuration file and applies command-line overrides.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(io_err(p))?,
        None => String::new(),
    };
    Ok(parse_config(&text, overrides)?)
}

/// Fresh policy weights for `config`, drawn from a stream of its seed that
/// no episode uses.
pub fn initial_policy(config: &TrainConfig) -> Result<PolicyParams> {
    let shape = config.policy_shape()?;
    Ok(PolicyParams::init(
        shape,
        &mut crate::rng_from_stream(config.seed, 3),
    )?)
}

pub const METRICS_HEADER: &str =
    "iteration,mean_return,mean_aug_return,obs_fraction,mean_length,grad_norm,elapsed_s";
pub const EVAL_HEADER: &str = "episode,return,cost,length,obs_fraction,success";

pub fn metrics_row(r: &TrainReport) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.iteration,
        r.mean_return,
        r.mean_aug_return,
        r.obs_fraction,
        r.mean_length,
        r.grad_norm,
        r.elapsed_s
    )
}

/// Whether an episode counts as solved: the pole survived to the step cap,
/// or the goal cell was reached.
pub fn episode_success(env: EnvKind, trace: &EpisodeTrace, max_steps: usize) -> bool {
    match env {
        EnvKind::CartPole => trace.length >= max_steps,
        EnvKind::Rooms | EnvKind::OracleMaze => trace.reached_goal(RoomsWorld::GOAL_REWARD),
    }
}

fn max_steps(config: &TrainConfig) -> Result<usize> {
    let env = config
        .env_spec()
        .dual(config.epsilon)
        .map_err(|e| ConfigError::InvalidValue {
            origin: Origin::Resolved,
            key: "env".into(),
            reason: e.to_string(),
        })?;
    Ok(env.max_steps())
}

pub fn eval_csv(config: &TrainConfig, traces: &[EpisodeTrace]) -> Result<String> {
    let cap = max_steps(config)?;
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for (i, t) in traces.iter().enumerate() {
        let frac = if t.length == 0 {
            0.0
        } else {
            t.cost as f64 / t.length as f64
        };
        out.push_str(&format!(
            "{i},{},{},{},{frac},{}\n",
            t.total_reward,
            t.cost,
            t.length,
            u8::from(episode_success(config.env, t, cap))
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct JsonStep<'a> {
    t: usize,
    sigma: u8,
    a: usize,
    r: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pos: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    opt: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    o: Option<&'a [f64]>,
}

#[derive(Serialize)]
struct JsonEpisode<'a> {
    episode: usize,
    #[serde(rename = "return")]
    total: f64,
    cost: usize,
    steps: Vec<JsonStep<'a>>,
}

/// One JSON object per episode. Steps carry `pos` in grid environments,
/// `opt` for discrete options, and the option vector `o` on acquisitions.
pub fn traces_jsonl(traces: &[EpisodeTrace]) -> String {
    let mut out = String::new();
    for (episode, trace) in traces.iter().enumerate() {
        let steps = trace
            .steps
            .iter()
            .map(|s| JsonStep {
                t: s.t,
                sigma: u8::from(s.sigma),
                a: s.action,
                r: s.reward,
                pos: s.position.map(|(r, c)| [r, c]),
                opt: s.option_index,
                o: s.option_snapshot.as_deref(),
            })
            .collect();
        let line = JsonEpisode {
            episode,
            total: trace.total_reward,
            cost: trace.cost,
            steps,
        };
        out.push_str(&serde_json::to_string(&line).expect("trace fields always serialize"));
        out.push('\n');
    }
    out
}

/// Option vectors at every acquisition, labelled for external embedding.
pub fn dump_option_latents(traces: &[EpisodeTrace], n_gru: usize) -> String {
    let mut out = String::from("episode,t,goal_annotation");
    for j in 1..=n_gru {
        out.push_str(&format!(",o_{j}"));
    }
    out.push('\n');
    for (episode, trace) in traces.iter().enumerate() {
        for step in &trace.steps {
            if let Some(o) = &step.option_snapshot {
                out.push_str(&format!("{episode},{},{}", step.t, step.goal_annotation));
                for v in o {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
    }
    out
}

fn write_eval_artifacts(config: &TrainConfig, n_gru: usize, traces: &[EpisodeTrace]) -> Result<()> {
    let dir = &config.out_dir;
    write_file(&dir.join("eval.csv"), &eval_csv(config, traces)?)?;
    write_file(&dir.join("traces.jsonl"), &traces_jsonl(traces))?;
    write_file(
        &dir.join("options.csv"),
        &dump_option_latents(traces, n_gru),
    )
}

fn save_params(policy: &PolicyParams, path: &Path) -> Result<()> {
    fs::write(path, policy.store.to_bytes()).map_err(io_err(path))
}

/// Loads `params.bin` from the configuration's output directory.
pub fn load_policy(config: &TrainConfig) -> Result<PolicyParams> {
    let mut policy = initial_policy(config)?;
    let path = config.out_dir.join("params.bin");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let store = ParamStore::from_bytes(&bytes).map_err(|source| HarnessError::Params {
        path: path.clone(),
        source,
    })?;
    policy.load_store(store)?;
    Ok(policy)
}

fn evaluate(config: &TrainConfig, policy: &PolicyParams) -> Result<EvalResult> {
    let mut options = config.train_settings().step_options();
    options.with_entropy = false;
    options.greedy = config.greedy_eval;
    Ok(trainer::evaluate(
        policy,
        &config.env_spec(),
        config.epsilon,
        config.eval_episodes,
        config.seed,
        &options,
    )?)
}

/// Outcome of [`run_train`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub reports: Vec<TrainReport>,
    pub policy: PolicyParams,
    pub eval: Option<EvalResult>,
}

/// Trains according to `config` and writes every artifact.
pub fn run_train(config: &TrainConfig) -> Result<TrainOutcome> {
    run_train_with(config, |_, _| ControlFlow::Continue(()))
}

/// [`run_train`] with a per-update hook that may stop training early.
pub fn run_train_with<F>(config: &TrainConfig, mut on_report: F) -> Result<TrainOutcome>
where
    F: FnMut(&TrainReport, &PolicyParams) -> ControlFlow<()>,
{
    let dir = &config.out_dir;
    create_dir(dir)?;
    write_file(&dir.join("config.txt"), &config.to_text())?;
    let policy = initial_policy(config)?;
    let n_gru = policy.shape.n_gru;

    let metrics_path = dir.join("metrics.csv");
    let file = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    let mut metrics = BufWriter::new(file);
    writeln!(metrics, "{METRICS_HEADER}").map_err(io_err(&metrics_path))?;

    let mut trainer = Trainer::new(config.train_settings(), policy)?;
    let mut write_error = None;
    let trained = trainer.train(config.iterations, |report, policy| {
        if let Err(e) = writeln!(metrics, "{}", metrics_row(report)) {
            write_error = Some(e);
            return ControlFlow::Break(());
        }
        on_report(report, policy)
    });
    metrics.flush().map_err(io_err(&metrics_path))?;
    if let Some(e) = write_error {
        return Err(io_err(&metrics_path)(e));
    }
    let reports = trained?;
    let policy = trainer.policy;
    save_params(&policy, &dir.join("params.bin"))?;

    let eval = if config.eval_episodes > 0 {
        let result = evaluate(config, &policy)?;
        write_eval_artifacts(config, n_gru, &result.traces)?;
        Some(result)
    } else {
        write_eval_artifacts(config, n_gru, &[])?;
        None
    };
    Ok(TrainOutcome {
        reports,
        policy,
        eval,
    })
}

/// Evaluates the weights saved in the output directory and rewrites the
/// evaluation artifacts.
pub fn run_eval(config: &TrainConfig) -> Result<EvalResult> {
    let policy = load_policy(config)?;
    let result = evaluate(config, &policy)?;
    write_eval_artifacts(config, policy.shape.n_gru, &result.traces)?;
    Ok(result)
}

/// One evaluation episode together with the layout it was played on.
#[derive(Debug, Clone)]
pub struct RenderedEpisode {
    pub trace: EpisodeTrace,
    pub geometry: GridGeometry,
    pub goal: Option<Cell>,
    pub svg: String,
}

/// Plays `n` evaluation episodes and renders each as SVG.
pub fn render_episodes(
    config: &TrainConfig,
    policy: &PolicyParams,
    n: usize,
) -> Result<Vec<RenderedEpisode>> {
    let mut options = config.train_settings().step_options();
    options.with_entropy = false;
    options.greedy = config.greedy_eval;
    let spec = config.env_spec();
    let mut out = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let mut env = spec.dual(config.epsilon).map_err(TrainError::from)?;
        let rollout = policy.rollout(&mut env, eval_episode_seed(config.seed, i), &options)?;
        let geometry = env.inner().geometry().ok_or(RenderError::Unsupported)?;
        let goal = env.inner().goal();
        let svg = render_trajectory_svg(&rollout.trace, &geometry, goal)?;
        out.push(RenderedEpisode {
            trace: rollout.trace,
            geometry,
            goal,
            svg,
        });
    }
    Ok(out)
}

/// Renders `eval_episodes` episodes of the saved policy into
/// `out_dir/render/episode_<i>.svg`; returns the written paths.
pub fn run_render(config: &TrainConfig) -> Result<Vec<PathBuf>> {
    if config.env == EnvKind::CartPole {
        return Err(RenderError::Unsupported.into());
    }
    let policy = load_policy(config)?;
    let dir = config.out_dir.join("render");
    create_dir(&dir)?;
    let mut paths = Vec::new();
    for (i, ep) in render_episodes(config, &policy, config.eval_episodes)?
        .iter()
        .enumerate()
    {
        let path = dir.join(format!("episode_{i}.svg"));
        write_file(&path, &ep.svg)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Result of one `(λ, seed)` run in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub lambda: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// `(obs_fraction, mean_return)` of the evaluation, or the failure.
    pub outcome: std::result::Result<(f64, f64), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
    /// One point per λ with at least one successful seed.
    pub points: Vec<ParetoPoint>,
    pub dominated: Vec<bool>,
    /// Rank correlation between λ and mean acquisition fraction.
    pub spearman: f64,
}

pub const SWEEP_HEADER: &str = "lambda,seed,status,obs_fraction,mean_return";
pub const PARETO_HEADER: &str = "lambda,obs_fraction,mean_return,seeds,dominated";

/// Trains one run per `(λ, seed)` under `base.out_dir/lambda_<λ>_seed_<s>`,
/// averages seeds per λ, and writes `sweep.csv` and `pareto.csv`. A failing
/// run is recorded and the sweep carries on.
pub fn run_sweep(base: &TrainConfig, lambdas: &[f64], seeds: &[u64]) -> Result<SweepOutcome> {
    if lambdas.is_empty() || seeds.is_empty() {
        return Err(ConfigError::InvalidValue {
            origin: Origin::Resolved,
            key: "sweep_lambdas".into(),
            reason: "a sweep needs at least one λ and one seed".into(),
        }
        .into());
    }
    create_dir(&base.out_dir)?;
    let mut runs = Vec::new();
    for &lambda in lambdas {
        for &seed in seeds {
            let mut config = base.clone();
            config.lambda = lambda;
            config.seed = seed;
            config.eval_episodes = config.eval_episodes.max(1);
            config.out_dir = base.out_dir.join(format!("lambda_{lambda}_seed_{seed}"));
            let outcome = match run_train(&config) {
                Ok(TrainOutcome { eval: Some(e), .. }) => Ok((e.obs_fraction, e.mean_return)),
                Ok(_) => Err("no evaluation".to_string()),
                Err(HarnessError::Config(e)) => return Err(e.into()),
                Err(e) => Err(e.to_string()),
            };
            runs.push(SweepRun {
                lambda,
                seed,
                out_dir: config.out_dir,
                outcome,
            });
        }
    }

    let mut points = Vec::new();
    for &lambda in lambdas {
        let ok: Vec<(f64, f64)> = runs
            .iter()
            .filter(|r| r.lambda == lambda)
            .filter_map(|r| r.outcome.clone().ok())
            .collect();
        if ok.is_empty() {
            continue;
        }
        let n = ok.len() as f64;
        points.push(ParetoPoint {
            lambda,
            cost: ok.iter().map(|p| p.0).sum::<f64>() / n,
            reward: ok.iter().map(|p| p.1).sum::<f64>() / n,
            seeds: ok.len(),
        });
    }
    let dominated = excluded_flags(&points);
    let ls: Vec<f64> = points.iter().map(|p| p.lambda).collect();
    let cs: Vec<f64> = points.iter().map(|p| p.cost).collect();
    let rho = if points.len() >= 2 {
        spearman(&ls, &cs)
    } else {
        0.0
    };

    let mut sweep_csv = format!("{SWEEP_HEADER}\n");
    for r in &runs {
        match &r.outcome {
            Ok((c, m)) => sweep_csv.push_str(&format!("{},{},ok,{c},{m}\n", r.lambda, r.seed)),
            Err(_) => sweep_csv.push_str(&format!("{},{},failed,,\n", r.lambda, r.seed)),
        }
    }
    write_file(&base.out_dir.join("sweep.csv"), &sweep_csv)?;
    let mut pareto_csv = format!("{PARETO_HEADER}\n");
    for (p, d) in points.iter().zip(&dominated) {
        pareto_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            p.lambda,
            p.cost,
            p.reward,
            p.seeds,
            u8::from(*d)
        ));
    }
    write_file(&base.out_dir.join("pareto.csv"), &pareto_csv)?;

    Ok(SweepOutcome {
        runs,
        points,
        dominated,
        spearman: rho,
    })
}
