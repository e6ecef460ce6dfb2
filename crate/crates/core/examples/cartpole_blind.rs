//! Blind CartPole: the policy sees only its previous action unless it pays
//! to read the full state.
//!
//! `cargo run --release --example cartpole_blind -- [rpg] [key=value ...]`
//!
//! `rpg` trains the comparator that reads the state at every step. Extra
//! `key=value` pairs override the bundled configuration, e.g. `seed=3`.

use std::ops::ControlFlow;

use bonn::harness::{parse_config, run_train_with};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let text = if args.iter().any(|a| a == "rpg") {
        include_str!("../configs/cartpole_rpg.txt")
    } else {
        include_str!("../configs/cartpole_bonn.txt")
    };
    let mut overrides: Vec<(String, String)> = vec![("out_dir".into(), "runs/cartpole".into())];
    overrides.extend(
        args.iter()
            .filter_map(|a| a.split_once('='))
            .map(|(k, v)| (k.into(), v.into())),
    );
    let config = parse_config(text, &overrides).unwrap_or_else(|e| panic!("{e}"));

    let outcome = run_train_with(&config, |r, _| {
        if r.iteration % 100 == 0 {
            println!(
                "update {:>5}  return {:>6.1}  obs {:.3}  length {:>5.1}",
                r.iteration, r.mean_return, r.obs_fraction, r.mean_length
            );
        }
        ControlFlow::Continue(())
    })
    .unwrap_or_else(|e| panic!("{e}"));
    if let Some(eval) = outcome.eval {
        println!(
            "evaluation over {} episodes: return {:.1}, obs {:.3}",
            eval.traces.len(),
            eval.mean_return,
            eval.obs_fraction
        );
    }
    println!("artifacts in {}", config.out_dir.display());
}
