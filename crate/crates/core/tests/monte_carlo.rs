//! Sampling routines against their stated distributions.

mod common;

use rand::Rng;

use bonn::diffcore::Tape;
use bonn::envs::{apply_stochasticity, EnvSpec, ObsMode};
use bonn::policy::{sample_index, OptionMode, StepOptions};
use bonn::{rng_from_seed, rng_from_stream};

const DRAWS: usize = 100_000;

/// Each empirical frequency lies within 3 standard errors of its target.
fn assert_frequencies(counts: &[usize], probs: &[f64], n: usize) {
    for (i, (&c, &p)) in counts.iter().zip(probs).enumerate() {
        let freq = c as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * se + 1e-12,
            "index {i}: frequency {freq} vs probability {p} (3σ = {})",
            3.0 * se
        );
    }
}

#[test]
fn discrete_option_selection_follows_softmax() {
    let env = EnvSpec::Rooms {
        k: 2,
        room_size: 5,
        mode: ObsMode::Blind,
    };
    let (policy, dual) = common::random_policy(&env, OptionMode::Discrete(5), 41);
    let y: Vec<f64> = (0..dual.y_dim())
        .map(|i| if i % 3 == 0 { 1.0 } else { 0.0 })
        .collect();
    let mut rng = rng_from_seed(42);
    let mut counts = vec![0; 5];
    let mut probs = Vec::new();
    let mut tape = Tape::new();
    for d in 0..DRAWS {
        if d % 1000 == 0 {
            tape = Tape::new();
        }
        let y_repr = policy.represent_y(&mut tape, &y).unwrap();
        let (index, p, option) = policy
            .select_option_discrete(&mut tape, y_repr, &mut rng)
            .unwrap();
        if probs.is_empty() {
            probs = tape.value(p).to_vec();
        }
        let emb = policy.store.get(policy.option_embeddings.unwrap());
        let n = policy.shape.n_gru;
        assert_eq!(
            tape.value(option),
            &emb.values()[index * n..(index + 1) * n]
        );
        counts[index] += 1;
    }
    assert!(
        probs.iter().all(|&p| p > 0.02),
        "degenerate test distribution {probs:?}"
    );
    assert_frequencies(&counts, &probs, DRAWS);
}

#[test]
fn full_noise_gives_uniform_actions() {
    let mut rng = rng_from_stream(5, 1);
    let mut counts = [0; 4];
    for d in 0..DRAWS {
        counts[apply_stochasticity(d % 2, 1.0, 4, &mut rng)] += 1;
    }
    assert_frequencies(&counts, &[0.25; 4], DRAWS);
}

#[test]
fn partial_noise_mixes_with_uniform() {
    let mut rng = rng_from_stream(6, 1);
    let mut counts = [0; 4];
    for _ in 0..DRAWS {
        counts[apply_stochasticity(2, 0.25, 4, &mut rng)] += 1;
    }
    let off = 0.25 / 4.0;
    assert_frequencies(&counts, &[off, off, 0.75 + off, off], DRAWS);
}

#[test]
fn zero_noise_never_redraws() {
    let mut rng = rng_from_seed(7);
    for a in 0..4 {
        assert_eq!(apply_stochasticity(a, 0.0, 4, &mut rng), a);
    }
}

#[test]
fn inverse_cdf_sampling() {
    let probs = [0.1, 0.0, 0.45, 0.3, 0.15];
    let mut rng = rng_from_seed(8);
    let mut counts = [0; 5];
    for _ in 0..DRAWS {
        counts[sample_index(&probs, rng.gen())] += 1;
    }
    assert_eq!(counts[1], 0);
    assert_frequencies(&counts, &probs, DRAWS);
    assert_eq!(sample_index(&[0.5, 0.5, 0.0], 0.999_999_999_999_999_9), 1);
}

/// Over many steps, the number of acquisitions matches the sum of the
/// acquisition probabilities the policy reported, within 3 standard errors.
#[test]
fn acquisition_draws_match_reported_probabilities() {
    let env = EnvSpec::Rooms {
        k: 2,
        room_size: 5,
        mode: ObsMode::Blind,
    };
    let (mut policy, mut dual) = common::random_policy(&env, OptionMode::Continuous, 43);
    // shrink weights so probabilities stay away from 0 and 1
    for t in policy.store.tensors_mut() {
        t.values_mut().iter_mut().for_each(|v| *v *= 0.3);
    }
    let opts = StepOptions {
        max_steps: Some(50),
        ..StepOptions::default()
    };
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for seed in 0..2000 {
        let r = policy.rollout(&mut dual, seed, &opts).unwrap();
        for s in &r.trace.steps {
            let p = s.acquisition_probability;
            observed += if s.sigma { 1.0 } else { 0.0 };
            expected += p;
            variance += p * (1.0 - p);
        }
    }
    assert!(variance > 100.0);
    assert!(
        (observed - expected).abs() <= 3.0 * variance.sqrt(),
        "observed {observed}, expected {expected}, sd {}",
        variance.sqrt()
    );
}
