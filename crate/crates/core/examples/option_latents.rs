//! Trains a short blind rooms run and exports the continuous option vectors
//! with their goal-area labels (options.csv), ready for an external
//! embedding tool.
//!
//! `cargo run --release --example option_latents -- [key=value ...]`

use std::collections::BTreeMap;

use bonn::harness::{parse_config, run_train};

fn main() {
    let mut overrides: Vec<(String, String)> = vec![
        ("out_dir".into(), "runs/latents".into()),
        ("iterations".into(), "3000".into()),
        ("eval_episodes".into(), "200".into()),
    ];
    overrides.extend(std::env::args().skip(1).filter_map(|a| {
        a.split_once('=')
            .map(|(k, v)| (k.to_string(), v.to_string()))
    }));
    let config = parse_config(include_str!("../configs/rooms_blind.txt"), &overrides)
        .unwrap_or_else(|e| panic!("{e}"));
    let outcome = run_train(&config).unwrap_or_else(|e| panic!("{e}"));
    let Some(eval) = outcome.eval else { return };

    let mut by_label: BTreeMap<i64, usize> = BTreeMap::new();
    for s in eval
        .traces
        .iter()
        .flat_map(|t| &t.steps)
        .filter(|s| s.sigma)
    {
        *by_label.entry(s.goal_annotation).or_default() += 1;
    }
    println!("option vectors per goal-area label: {by_label:?}");
    println!("wrote {}", config.out_dir.join("options.csv").display());
}
