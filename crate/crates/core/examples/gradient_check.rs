//! Compares the tape's gradients of a small GRU policy head with central
//! finite differences and prints the worst relative error per tensor.
//!
//! `cargo run --release --example gradient_check`

use bonn::diffcore::Tape;
use bonn::nn::{GruParams, LinearParams, ParamStore};
use bonn::rng_from_seed;

fn loss(
    store: &ParamStore,
    gru: &GruParams,
    head: &LinearParams,
    tape: &mut Tape,
) -> bonn::diffcore::Var {
    let xs = [[0.5, -1.0, 0.2], [0.0, 0.3, -0.7], [1.2, 0.1, 0.4]];
    let mut h = tape.constant(&[0.0; 4]);
    for x in xs {
        let x = tape.constant(&x);
        h = gru.step(store, tape, x, h).unwrap();
    }
    let logits = head.forward(store, tape, h).unwrap();
    let dist = tape.softmax(logits).unwrap();
    let lp = tape.pick_log_prob(dist, 1).unwrap();
    let ent = tape.entropy(dist).unwrap();
    tape.combine(&[(lp, -1.0), (ent, -0.1)]).unwrap()
}

fn main() {
    let mut rng = rng_from_seed(7);
    let mut store = ParamStore::new();
    let gru = GruParams::init(&mut store, "gru", 3, 4, &mut rng);
    let head = LinearParams::init(&mut store, "head", 4, 3, &mut rng);

    let mut tape = Tape::new();
    let out = loss(&store, &gru, &head, &mut tape);
    let mut grads = store.tensors().to_vec();
    grads.iter_mut().for_each(|g| g.zero_grad());
    tape.backward(out, &mut grads).unwrap();

    let eps = 1e-5;
    let value = |s: &ParamStore| {
        let mut t = Tape::new();
        let v = loss(s, &gru, &head, &mut t);
        t.scalar(v)
    };
    let mut work = store.clone();
    for (i, grad) in grads.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..store.get(i).len() {
            let orig = store.get(i).values()[j];
            work.get_mut(i).values_mut()[j] = orig + eps;
            let up = value(&work);
            work.get_mut(i).values_mut()[j] = orig - eps;
            let down = value(&work);
            work.get_mut(i).values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad.grad()[j];
            let scale = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
        println!(
            "{:<12} {:>3} entries, worst relative error {worst:.2e}",
            store.name(i),
            store.get(i).len()
        );
    }
}
