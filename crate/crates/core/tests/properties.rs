//! Property-based invariants.

mod common;

use proptest::prelude::*;

use bonn::diffcore::{softmax_into, Tensor};
use bonn::envs::{maze_generate, EnvSpec, ObsMode};
use bonn::nn::ParamStore;
use bonn::policy::{OptionMode, StepOptions};
use bonn::rng_from_seed;
use bonn::trainer::compute_returns;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn episode() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn env_and_mode() -> impl Strategy<Value = (EnvSpec, OptionMode)> {
    let env = prop_oneof![
        Just(EnvSpec::CartPole),
        Just(EnvSpec::Rooms {
            k: 2,
            room_size: 5,
            mode: ObsMode::Blind
        }),
        Just(EnvSpec::Rooms {
            k: 2,
            room_size: 5,
            mode: ObsMode::Split
        }),
        Just(EnvSpec::OracleMaze {
            width: 7,
            height: 7
        }),
    ];
    let mode = prop_oneof![
        Just(OptionMode::Continuous),
        (2usize..6).prop_map(OptionMode::Discrete)
    ];
    (env, mode)
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let mut p = Vec::new();
        softmax_into(&x, &mut p);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant(x in prop::collection::vec(-20.0f64..20.0, 1..12), c in -500.0f64..500.0) {
        let mut p = Vec::new();
        let mut q = Vec::new();
        softmax_into(&x, &mut p);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        softmax_into(&shifted, &mut q);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_cost_leaves_returns_unchanged((rewards, sigmas) in episode(), gamma in 0.0f64..=1.0) {
        let p = compute_returns(&common::trace_from(&rewards, &sigmas), gamma, 0.0);
        prop_assert_eq!(p.plain, p.augmented);
    }

    #[test]
    fn augmented_return_recurrence((rewards, sigmas) in episode(), gamma in 0.0f64..=1.0, lambda in 0.0f64..10.0) {
        let p = compute_returns(&common::trace_from(&rewards, &sigmas), gamma, lambda);
        let n = rewards.len();
        for t in 0..n {
            let next_plain = if t + 1 < n { p.plain[t + 1] } else { 0.0 };
            let next_aug = if t + 1 < n { p.augmented[t + 1] } else { 0.0 };
            let cost = if sigmas[t] { lambda } else { 0.0 };
            prop_assert!((p.plain[t] - (rewards[t] + gamma * next_plain)).abs() < 1e-12);
            prop_assert!((p.augmented[t] - (rewards[t] - cost + gamma * next_aug)).abs() < 1e-12);
        }
    }

    #[test]
    fn param_store_round_trip_is_bitwise(blocks in prop::collection::vec(
        (1usize..5, 1usize..5, prop::collection::vec(any::<f64>(), 25)), 1..6)
    ) {
        let mut store = ParamStore::new();
        for (i, (r, c, vals)) in blocks.iter().enumerate() {
            let t = Tensor::matrix(*r, *c, vals[..r * c].to_vec()).unwrap();
            store.add(format!("block{i}"), t);
        }
        let back = ParamStore::from_bytes(&store.to_bytes()).unwrap();
        prop_assert_eq!(back.len(), store.len());
        for ((na, a), (nb, b)) in store.iter().zip(back.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(a.dims(), b.dims());
            let bits_a: Vec<u64> = a.values().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
    }
}

proptest! {
    #![proptest_config(cases(200))]

    #[test]
    fn generated_mazes_are_perfect(seed in any::<u64>(), w in 2usize..10, h in 2usize..10) {
        let mut rng = rng_from_seed(seed);
        let maze = maze_generate(2 * w + 1, 2 * h + 1, &mut rng).unwrap();
        common::check_perfect_maze(&maze).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn planner_matches_dijkstra(seed in any::<u64>()) {
        common::check_oracle_against_dijkstra(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn state_threading((env, mode) in env_and_mode(), seed in 0u64..10_000) {
        common::check_state_threading(&env, mode, seed).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(cases(50))]

    #[test]
    fn forced_acquisition_observes_every_step((env, mode) in env_and_mode(), seed in 0u64..10_000) {
        let (policy, mut dual) = common::random_policy(&env, mode, seed);
        let opts = StepOptions { force_full_obs: true, max_steps: Some(100), ..StepOptions::default() };
        let r = policy.rollout(&mut dual, seed, &opts).unwrap();
        prop_assert_eq!(r.trace.cost, r.trace.length);
        prop_assert!(r.trace.steps.iter().all(|s| s.sigma && s.log_p_sigma.is_none()));
    }
}

#[test]
fn pareto_front_matches_brute_force_on_1000_sets() {
    common::check_pareto_sets(77, 1000).unwrap();
}
