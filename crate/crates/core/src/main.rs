use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bonn::harness::{self, HarnessError, TrainConfig};

#[derive(Parser)]
#[command(
    name = "bonn",
    version,
    about = "Train and inspect budgeted option policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics, weights and evaluation traces.
    Train(Common),
    /// Re-evaluate the weights in --out-dir.
    Eval(Common),
    /// Train every (λ, seed) pair and extract the reward/cost Pareto front.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated cost levels.
        #[arg(long)]
        lambdas: Option<String>,
        /// Number of seeds per cost level, counting up from --seed.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Draw evaluation trajectories of the weights in --out-dir as SVG.
    Render(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    obs_mode: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    k: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<String>,
    /// Number of discrete options; 0 selects continuous options.
    #[arg(long)]
    k_options: Option<usize>,
    #[arg(long)]
    force_full_obs: bool,
    #[arg(long, allow_hyphen_values = true)]
    lr: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    clip: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    batch: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    iterations: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    eval_episodes: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |key: &str, value: &Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v.clone()));
            }
        };
        push("env", &self.env);
        push("obs_mode", &self.obs_mode);
        push("k", &self.k);
        push("lambda", &self.lambda);
        push("epsilon", &self.epsilon);
        push("gamma", &self.gamma);
        push("lr", &self.lr);
        push("clip_norm", &self.clip);
        push("batch", &self.batch);
        push("iterations", &self.iterations);
        push("eval_episodes", &self.eval_episodes);
        push("seed", &self.seed);
        push("out_dir", &self.out_dir);
        match self.k_options {
            Some(0) => out.push(("option_mode".into(), "continuous".into())),
            Some(k) => {
                out.push(("option_mode".into(), "discrete".into()));
                out.push(("k_options".into(), k.to_string()));
            }
            None => {}
        }
        if self.force_full_obs {
            out.push(("force_full_obs".into(), "true".into()));
        }
        out
    }

    fn load(&self, extra: Vec<(String, String)>) -> Result<TrainConfig, HarnessError> {
        let mut overrides = self.overrides();
        overrides.extend(extra);
        harness::load_config(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train(common) => {
            let config = common.load(Vec::new())?;
            let outcome = harness::run_train(&config)?;
            if let Some(last) = outcome.reports.last() {
                println!(
                    "iteration {}: return {:.2}, obs_fraction {:.3}",
                    last.iteration, last.mean_return, last.obs_fraction
                );
            }
            if let Some(eval) = outcome.eval {
                println!(
                    "eval: return {:.2}, obs_fraction {:.3}",
                    eval.mean_return, eval.obs_fraction
                );
            }
            println!("artifacts in {}", config.out_dir.display());
        }
        Command::Eval(common) => {
            let config = common.load(Vec::new())?;
            let eval = harness::run_eval(&config)?;
            println!(
                "eval over {} episodes: return {:.2}, obs_fraction {:.3}, length {:.1}",
                eval.traces.len(),
                eval.mean_return,
                eval.obs_fraction,
                eval.mean_length
            );
        }
        Command::Sweep {
            common,
            lambdas,
            seeds,
        } => {
            let mut extra = Vec::new();
            if let Some(l) = lambdas {
                extra.push(("sweep_lambdas".to_string(), l));
            }
            if let Some(s) = seeds {
                extra.push(("sweep_seeds".to_string(), s.to_string()));
            }
            let config = common.load(extra)?;
            let seeds: Vec<u64> = (0..config.sweep_seeds as u64)
                .map(|i| config.seed + i)
                .collect();
            let sweep = harness::run_sweep(&config, &config.sweep_lambdas, &seeds)?;
            for (p, dominated) in sweep.points.iter().zip(&sweep.dominated) {
                println!(
                    "λ = {}: obs_fraction {:.3}, return {:.2}{}",
                    p.lambda,
                    p.cost,
                    p.reward,
                    if *dominated { " (dominated)" } else { "" }
                );
            }
            let failed = sweep.runs.iter().filter(|r| r.outcome.is_err()).count();
            if failed > 0 {
                eprintln!("{failed} run(s) failed; see sweep.csv");
            }
            println!("spearman(λ, obs_fraction) = {:.3}", sweep.spearman);
        }
        Command::Render(common) => {
            let config = common.load(Vec::new())?;
            for path in harness::run_render(&config)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // bad flags are configuration errors
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
