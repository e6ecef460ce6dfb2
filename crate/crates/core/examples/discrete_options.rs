//! Rooms with a fixed set of nine learned option embeddings. Renders a few
//! evaluation episodes with each option in its own colour.
//!
//! `cargo run --release --example discrete_options -- [key=value ...]`

use std::collections::BTreeMap;
use std::fs;
use std::ops::ControlFlow;

use bonn::harness::{parse_config, render_episodes, run_train_with};

fn main() {
    let mut overrides: Vec<(String, String)> = vec![("out_dir".into(), "runs/discrete".into())];
    overrides.extend(std::env::args().skip(1).filter_map(|a| {
        a.split_once('=')
            .map(|(k, v)| (k.to_string(), v.to_string()))
    }));
    let config = parse_config(include_str!("../configs/rooms_discrete.txt"), &overrides)
        .unwrap_or_else(|e| panic!("{e}"));

    let outcome = run_train_with(&config, |r, _| {
        if r.iteration % 500 == 0 {
            println!(
                "update {:>5}  return {:>6.1}  obs {:.3}",
                r.iteration, r.mean_return, r.obs_fraction
            );
        }
        ControlFlow::Continue(())
    })
    .unwrap_or_else(|e| panic!("{e}"));
    if let Some(eval) = &outcome.eval {
        let mut usage: BTreeMap<usize, usize> = BTreeMap::new();
        for s in eval.traces.iter().flat_map(|t| &t.steps) {
            if let Some(i) = s.option_index {
                *usage.entry(i).or_default() += 1;
            }
        }
        println!(
            "evaluation: goal rate {:.2}, obs {:.3}; option usage {usage:?}",
            eval.goal_rate(20.0),
            eval.obs_fraction
        );
    }
    let dir = config.out_dir.join("render");
    fs::create_dir_all(&dir).unwrap();
    for (i, ep) in render_episodes(&config, &outcome.policy, 6)
        .unwrap()
        .iter()
        .enumerate()
    {
        let path = dir.join(format!("options_{i}.svg"));
        fs::write(&path, &ep.svg).unwrap();
        let options: Vec<usize> = ep
            .trace
            .steps
            .iter()
            .filter_map(|s| s.option_index)
            .collect();
        println!("{}: options {options:?}", path.display());
    }
}
