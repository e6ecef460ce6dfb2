//! Random 9×9 mazes where the expensive observation is the shortest-path
//! planner's next move. Writes SVG pictures of a few evaluation episodes.
//!
//! `cargo run --release --example oracle_maze -- [key=value ...]`

use std::fs;
use std::ops::ControlFlow;

use bonn::harness::{parse_config, render_episodes, run_train_with};

fn main() {
    let mut overrides: Vec<(String, String)> = vec![("out_dir".into(), "runs/maze".into())];
    overrides.extend(std::env::args().skip(1).filter_map(|a| {
        a.split_once('=')
            .map(|(k, v)| (k.to_string(), v.to_string()))
    }));
    let config = parse_config(include_str!("../configs/oracle_maze.txt"), &overrides)
        .unwrap_or_else(|e| panic!("{e}"));

    let outcome = run_train_with(&config, |r, _| {
        if r.iteration % 250 == 0 {
            println!(
                "update {:>5}  return {:>6.1}  obs {:.3}  length {:>5.1}",
                r.iteration, r.mean_return, r.obs_fraction, r.mean_length
            );
        }
        ControlFlow::Continue(())
    })
    .unwrap_or_else(|e| panic!("{e}"));
    if let Some(eval) = &outcome.eval {
        println!(
            "held-out mazes: goal rate {:.2}, obs {:.3}, mean length {:.1}",
            eval.goal_rate(20.0),
            eval.obs_fraction,
            eval.mean_length
        );
    }
    let dir = config.out_dir.join("render");
    fs::create_dir_all(&dir).unwrap();
    for (i, ep) in render_episodes(&config, &outcome.policy, 5)
        .unwrap()
        .iter()
        .enumerate()
    {
        let path = dir.join(format!("maze_{i}.svg"));
        fs::write(&path, &ep.svg).unwrap();
        println!(
            "{} ({} steps, {} acquisitions)",
            path.display(),
            ep.trace.length,
            ep.trace.cost
        );
    }
}
