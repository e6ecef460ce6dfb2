//! Four-room navigation. The default is the split setting with noisy
//! actions; `blind` switches to the blind deterministic setting and reports
//! how often the agent acquires per room.
//!
//! `cargo run --release --example rooms -- [blind] [key=value ...]`

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use bonn::harness::{parse_config, run_train_with};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let text = if args.iter().any(|a| a == "blind") {
        include_str!("../configs/rooms_blind.txt")
    } else {
        include_str!("../configs/rooms_split.txt")
    };
    let mut overrides: Vec<(String, String)> = vec![("out_dir".into(), "runs/rooms".into())];
    overrides.extend(
        args.iter()
            .filter_map(|a| a.split_once('='))
            .map(|(k, v)| (k.into(), v.into())),
    );
    let config = parse_config(text, &overrides).unwrap_or_else(|e| panic!("{e}"));

    let outcome = run_train_with(&config, |r, _| {
        if r.iteration % 500 == 0 {
            println!(
                "update {:>5}  return {:>6.1}  obs {:.3}  length {:>5.1}",
                r.iteration, r.mean_return, r.obs_fraction, r.mean_length
            );
        }
        ControlFlow::Continue(())
    })
    .unwrap_or_else(|e| panic!("{e}"));
    let Some(eval) = outcome.eval else { return };

    let mut per_room: BTreeMap<usize, usize> = BTreeMap::new();
    for trace in &eval.traces {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &trace.steps {
            *counts.entry(s.region.unwrap_or(0)).or_default() += usize::from(s.sigma);
        }
        for c in counts.into_values() {
            *per_room.entry(c).or_default() += 1;
        }
    }
    println!(
        "evaluation: return {:.1}, obs {:.3}, goal rate {:.2}",
        eval.mean_return,
        eval.obs_fraction,
        eval.goal_rate(20.0)
    );
    println!("acquisitions per visited room (count: visits): {per_room:?}");
}
