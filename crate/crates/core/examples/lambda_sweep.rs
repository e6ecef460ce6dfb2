//! Trains blind CartPole at several cost levels and prints the reward/cost
//! Pareto front.
//!
//! `cargo run --release --example lambda_sweep -- [iterations=N] [seeds=S]`

use bonn::harness::{pareto_front, parse_config, run_sweep};

fn main() {
    let mut overrides: Vec<(String, String)> = vec![("out_dir".into(), "runs/sweep".into())];
    let mut seeds = 3u64;
    for arg in std::env::args().skip(1) {
        match arg.split_once('=') {
            Some(("seeds", v)) => seeds = v.parse().expect("seeds is a count"),
            Some((k, v)) => overrides.push((k.into(), v.into())),
            None => {}
        }
    }
    let config = parse_config(include_str!("../configs/cartpole_bonn.txt"), &overrides)
        .unwrap_or_else(|e| panic!("{e}"));
    let seed_list: Vec<u64> = (0..seeds).map(|i| config.seed + i).collect();
    let out =
        run_sweep(&config, &config.sweep_lambdas, &seed_list).unwrap_or_else(|e| panic!("{e}"));

    println!(
        "{:>7} {:>9} {:>9} {:>10}",
        "lambda", "obs", "return", "dominated"
    );
    for (p, d) in out.points.iter().zip(&out.dominated) {
        println!(
            "{:>7} {:>9.3} {:>9.1} {:>10}",
            p.lambda, p.cost, p.reward, d
        );
    }
    let front: Vec<f64> = pareto_front(&out.points).iter().map(|p| p.lambda).collect();
    println!("front (by cost): lambdas {front:?}");
    println!("spearman(lambda, obs) = {:.2}", out.spearman);
}
