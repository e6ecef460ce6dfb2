//! Long 3×3 rooms run. Not part of the test suite; expect tens of minutes on
//! one core.
//!
//! `cargo run --release --example rooms_3x3 -- [key=value ...]`

use std::ops::ControlFlow;

use bonn::harness::{parse_config, run_train_with};

fn main() {
    let mut overrides: Vec<(String, String)> = vec![("out_dir".into(), "runs/rooms_3x3".into())];
    overrides.extend(std::env::args().skip(1).filter_map(|a| {
        a.split_once('=')
            .map(|(k, v)| (k.to_string(), v.to_string()))
    }));
    let config = parse_config(include_str!("../configs/rooms_3x3.txt"), &overrides)
        .unwrap_or_else(|e| panic!("{e}"));
    let outcome = run_train_with(&config, |r, _| {
        if r.iteration % 1000 == 0 {
            println!(
                "update {:>6}  return {:>6.1}  obs {:.3}  length {:>5.1}  {:.0} s",
                r.iteration, r.mean_return, r.obs_fraction, r.mean_length, r.elapsed_s
            );
        }
        ControlFlow::Continue(())
    })
    .unwrap_or_else(|e| panic!("{e}"));
    if let Some(eval) = outcome.eval {
        println!(
            "evaluation: return {:.1}, obs {:.3}, goal rate {:.2}",
            eval.mean_return,
            eval.obs_fraction,
            eval.goal_rate(20.0)
        );
    }
}
