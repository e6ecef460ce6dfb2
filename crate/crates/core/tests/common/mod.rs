//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;

use bonn::diffcore::{Activation, Tape, Tensor, Var};
use bonn::envs::{
    bfs_optimal_action, maze_generate, Cell, DualEnv, EnvSpec, Maze, DOWN, LEFT, RIGHT, UP,
};
use bonn::harness::{pareto_front, ParetoPoint};
use bonn::nn::{GruParams, LinearParams, ParamStore};
use bonn::policy::{EpisodeTrace, OptionMode, PolicyParams, PolicyShape, StepOptions, StepTrace};
use bonn::{rng_from_seed, BonnRng};

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_TOL: f64 = 1e-7;

/// Finite-difference agreement rule: relative error below `FD_REL_TOL`,
/// or absolute error below `FD_ABS_TOL` when the true value is under 1e−3.
pub fn fd_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    if numeric.abs() < 1e-3 {
        diff <= FD_ABS_TOL
    } else {
        diff / analytic.abs().max(numeric.abs()) <= FD_REL_TOL
    }
}

/// Compares the tape's gradient of `build`'s scalar output against central
/// differences over every entry of every tensor in `store`. Returns the
/// number of entries checked.
pub fn check_gradients<F>(store: &ParamStore, build: F) -> Result<usize, String>
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    let mut grads: Vec<Tensor> = store.tensors().to_vec();
    for g in grads.iter_mut() {
        g.zero_grad();
    }
    tape.backward(loss, &mut grads).map_err(|e| e.to_string())?;

    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let v = build(&mut t, s);
        t.scalar(v)
    };
    let mut work = store.clone();
    let mut checked = 0;
    for (i, grad) in grads.iter().enumerate() {
        for j in 0..store.get(i).len() {
            let orig = store.get(i).values()[j];
            work.get_mut(i).values_mut()[j] = orig + FD_STEP;
            let up = eval(&work);
            work.get_mut(i).values_mut()[j] = orig - FD_STEP;
            let down = eval(&work);
            work.get_mut(i).values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grad.grad()[j];
            if !fd_close(analytic, numeric) {
                return Err(format!(
                    "{}[{j}]: analytic {analytic:e} vs numeric {numeric:e}",
                    store.name(i)
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

pub fn uniform_tensor(rng: &mut BonnRng, dims: Vec<usize>, bound: f64) -> Tensor {
    let n = dims.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(dims, values).expect("dims match value count")
}

#[derive(Debug, Clone)]
enum Layer {
    Affine {
        lin: LinearParams,
        act: Option<Activation>,
    },
    Gru {
        gru: GruParams,
        h0: Vec<f64>,
    },
    ConcatParam {
        id: usize,
    },
    MulParam {
        id: usize,
    },
    AddRow {
        id: usize,
        row: usize,
    },
    LogSigmoid,
    OneMinusScaled(f64),
    Softmax,
}

/// A randomly wired network ending in a log-likelihood and entropy head.
#[derive(Debug, Clone)]
pub struct RandomGraph {
    pub store: ParamStore,
    input: Vec<f64>,
    layers: Vec<Layer>,
    head: LinearParams,
    pick: usize,
    entropy_weight: f64,
}

impl RandomGraph {
    /// Layer widths at most 8, at most 4 hidden layers.
    pub fn generate(rng: &mut BonnRng) -> Self {
        let mut store = ParamStore::new();
        let mut width = rng.gen_range(1..=8);
        let input = (0..width).map(|_| rng.gen_range(-2.0..=2.0)).collect();
        let depth = rng.gen_range(1..=4);
        let mut layers = Vec::new();
        for d in 0..depth {
            let kind = rng.gen_range(0..8);
            let layer = match kind {
                0 | 1 => {
                    let out = rng.gen_range(1..=8);
                    let lin = LinearParams::init(&mut store, &format!("lin{d}"), width, out, rng);
                    let b = lin.b;
                    store
                        .get_mut(b)
                        .values_mut()
                        .iter_mut()
                        .for_each(|v| *v = rng.gen_range(-1.0..=1.0));
                    let act = match rng.gen_range(0..3) {
                        0 => None,
                        1 => Some(Activation::Tanh),
                        _ => Some(Activation::Sigmoid),
                    };
                    width = out;
                    Layer::Affine { lin, act }
                }
                2 => {
                    let hidden = rng.gen_range(1..=8);
                    let gru = GruParams::init(&mut store, &format!("gru{d}"), width, hidden, rng);
                    for id in gru.param_ids() {
                        store
                            .get_mut(id)
                            .values_mut()
                            .iter_mut()
                            .for_each(|v| *v = rng.gen_range(-1.5..=1.5));
                    }
                    let h0 = (0..hidden).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                    width = hidden;
                    Layer::Gru { gru, h0 }
                }
                3 if width < 8 => {
                    let extra = rng.gen_range(1..=8 - width);
                    let id = store.add(format!("cat{d}"), uniform_tensor(rng, vec![extra], 2.0));
                    width += extra;
                    Layer::ConcatParam { id }
                }
                3 | 4 => {
                    let id = store.add(format!("mul{d}"), uniform_tensor(rng, vec![width], 2.0));
                    Layer::MulParam { id }
                }
                5 => {
                    let rows = rng.gen_range(1..=4);
                    let id = store.add(
                        format!("emb{d}"),
                        uniform_tensor(rng, vec![rows, width], 2.0),
                    );
                    Layer::AddRow {
                        id,
                        row: rng.gen_range(0..rows),
                    }
                }
                6 => {
                    if rng.gen_bool(0.5) {
                        Layer::LogSigmoid
                    } else {
                        Layer::OneMinusScaled(rng.gen_range(-2.0..=2.0))
                    }
                }
                _ => Layer::Softmax,
            };
            layers.push(layer);
        }
        let classes = rng.gen_range(1..=8);
        let head = LinearParams::init(&mut store, "head", width, classes, rng);
        RandomGraph {
            store,
            input,
            layers,
            head,
            pick: rng.gen_range(0..classes),
            entropy_weight: rng.gen_range(-1.0..=1.0),
        }
    }

    pub fn build(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        let mut cur = tape.constant(&self.input);
        for layer in &self.layers {
            cur = match layer {
                Layer::Affine { lin, act } => {
                    let out = lin.forward(store, tape, cur).unwrap();
                    match act {
                        Some(a) => tape.activation(*a, out),
                        None => out,
                    }
                }
                Layer::Gru { gru, h0 } => {
                    let h = tape.constant(h0);
                    gru.step(store, tape, cur, h).unwrap()
                }
                Layer::ConcatParam { id } => {
                    let p = store.on(tape, *id);
                    let p = tape.tanh(p);
                    tape.concat(cur, p).unwrap()
                }
                Layer::MulParam { id } => {
                    let p = store.on(tape, *id);
                    tape.mul(cur, p).unwrap()
                }
                Layer::AddRow { id, row } => {
                    let m = store.on(tape, *id);
                    let r = tape.row(m, *row).unwrap();
                    tape.add(cur, r).unwrap()
                }
                Layer::LogSigmoid => tape.log_sigmoid(cur),
                Layer::OneMinusScaled(c) => {
                    let o = tape.one_minus(cur);
                    tape.scale(o, *c)
                }
                Layer::Softmax => tape.softmax(cur).unwrap(),
            };
        }
        let logits = self.head.forward(store, tape, cur).unwrap();
        let dist = tape.softmax(logits).unwrap();
        let lp = tape.pick_log_prob(dist, self.pick).unwrap();
        let ent = tape.entropy(dist).unwrap();
        tape.combine(&[(lp, 1.0), (ent, self.entropy_weight)])
            .unwrap()
    }
}

/// Gradient check over `n` random composite graphs drawn from `seed`.
pub fn random_graph_suite(seed: u64, n: usize) -> Result<usize, String> {
    let mut rng = rng_from_seed(seed);
    let mut total = 0;
    for k in 0..n {
        let g = RandomGraph::generate(&mut rng);
        total += check_gradients(&g.store, |tape, store| g.build(tape, store))
            .map_err(|e| format!("graph {k}: {e}"))?;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Mazes

fn neighbours(maze: &Maze, (r, c): Cell) -> Vec<Cell> {
    let mut out = Vec::new();
    if r > 0 {
        out.push((r - 1, c));
    }
    out.push((r + 1, c));
    if c > 0 {
        out.push((r, c - 1));
    }
    out.push((r, c + 1));
    out.into_iter().filter(|&n| maze.is_open(n)).collect()
}

/// The open cells form a tree: connected, and exactly one fewer undirected
/// edge than cells.
pub fn check_perfect_maze(maze: &Maze) -> Result<(), String> {
    let cells = maze.open_cells();
    if cells.is_empty() {
        return Err("no open cells".into());
    }
    let edges: usize = cells
        .iter()
        .map(|&c| neighbours(maze, c).len())
        .sum::<usize>()
        / 2;
    if edges + 1 != cells.len() {
        return Err(format!("{} cells but {} edges", cells.len(), edges));
    }
    let mut seen = vec![false; maze.width * maze.height];
    let mut queue = VecDeque::from([cells[0]]);
    seen[cells[0].0 * maze.width + cells[0].1] = true;
    let mut reached = 1;
    while let Some(c) = queue.pop_front() {
        for n in neighbours(maze, c) {
            let i = n.0 * maze.width + n.1;
            if !seen[i] {
                seen[i] = true;
                reached += 1;
                queue.push_back(n);
            }
        }
    }
    if reached != cells.len() {
        return Err(format!("only {reached} of {} cells connected", cells.len()));
    }
    Ok(())
}

/// Unit-weight Dijkstra from `source`.
pub fn dijkstra(maze: &Maze, source: Cell) -> Vec<Option<usize>> {
    let mut dist = vec![None; maze.width * maze.height];
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0usize, source)));
    while let Some(Reverse((d, c))) = heap.pop() {
        let i = c.0 * maze.width + c.1;
        if dist[i].is_some() {
            continue;
        }
        dist[i] = Some(d);
        for n in neighbours(maze, c) {
            if dist[n.0 * maze.width + n.1].is_none() {
                heap.push(Reverse((d + 1, n)));
            }
        }
    }
    dist
}

fn apply(action: usize, (r, c): Cell) -> Cell {
    match action {
        UP => (r - 1, c),
        DOWN => (r + 1, c),
        LEFT => (r, c - 1),
        RIGHT => (r, c + 1),
        _ => unreachable!(),
    }
}

/// Follows the planner from a random start to a random goal and compares
/// the walk length with Dijkstra's distance; also checks the tie order.
pub fn check_oracle_against_dijkstra(seed: u64) -> Result<(), String> {
    let mut rng = rng_from_seed(seed);
    let w = 2 * rng.gen_range(2..=7) + 1;
    let h = 2 * rng.gen_range(2..=7) + 1;
    let maze = maze_generate(w, h, &mut rng).map_err(|e| e.to_string())?;
    let cells = maze.open_cells();
    let from = cells[rng.gen_range(0..cells.len())];
    let mut goal = from;
    while goal == from {
        goal = cells[rng.gen_range(0..cells.len())];
    }
    let to_goal = dijkstra(&maze, goal);
    let expected = to_goal[from.0 * w + from.1].ok_or("goal unreachable")?;
    let mut cur = from;
    let mut steps = 0;
    while cur != goal {
        let a = bfs_optimal_action(&maze, cur, goal).map_err(|e| e.to_string())?;
        let here = to_goal[cur.0 * w + cur.1].unwrap();
        let first_best = [UP, DOWN, LEFT, RIGHT]
            .into_iter()
            .find(|&b| {
                let n = apply_checked(&maze, b, cur);
                n.is_some_and(|n| to_goal[n.0 * w + n.1] == Some(here - 1))
            })
            .ok_or("no improving move")?;
        if a != first_best {
            return Err(format!(
                "at {cur:?}: planner chose {a}, first shortest move is {first_best}"
            ));
        }
        cur = apply(a, cur);
        steps += 1;
        if steps > w * h {
            return Err("planner loops".into());
        }
    }
    if steps != expected {
        return Err(format!(
            "walk of {steps} moves, Dijkstra distance {expected}"
        ));
    }
    Ok(())
}

fn apply_checked(maze: &Maze, action: usize, (r, c): Cell) -> Option<Cell> {
    let n = match action {
        UP => (r.checked_sub(1)?, c),
        DOWN => (r + 1, c),
        LEFT => (r, c.checked_sub(1)?),
        _ => (r, c + 1),
    };
    maze.is_open(n).then_some(n)
}

// ---------------------------------------------------------------------------
// Pareto

/// O(n²) front: drop dominated points and later duplicates, then sort by cost.
pub fn brute_force_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut kept: Vec<(usize, ParetoPoint)> = Vec::new();
    'outer: for (i, p) in points.iter().enumerate() {
        for (j, q) in points.iter().enumerate() {
            let no_worse = q.cost <= p.cost && q.reward >= p.reward;
            let better = q.cost < p.cost || q.reward > p.reward;
            if no_worse && better {
                continue 'outer;
            }
            if j < i && q.cost == p.cost && q.reward == p.reward {
                continue 'outer;
            }
        }
        kept.push((i, p.clone()));
    }
    kept.sort_by(|a, b| a.1.cost.partial_cmp(&b.1.cost).unwrap().then(a.0.cmp(&b.0)));
    kept.into_iter().map(|(_, p)| p).collect()
}

pub fn random_points(rng: &mut BonnRng) -> Vec<ParetoPoint> {
    let n = rng.gen_range(1..=25);
    // a coarse grid makes ties and duplicates common
    (0..n)
        .map(|i| ParetoPoint {
            lambda: i as f64,
            cost: rng.gen_range(0..8) as f64 / 8.0,
            reward: rng.gen_range(0..8) as f64,
            seeds: 1,
        })
        .collect()
}

pub fn check_pareto_sets(seed: u64, sets: usize) -> Result<(), String> {
    let mut rng = rng_from_seed(seed);
    for k in 0..sets {
        let pts = random_points(&mut rng);
        let front = pareto_front(&pts);
        let expected = brute_force_front(&pts);
        if front != expected {
            return Err(format!(
                "set {k}: front {front:?} vs brute force {expected:?}"
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Policies

pub fn random_policy(env: &EnvSpec, mode: OptionMode, seed: u64) -> (PolicyParams, DualEnv) {
    let dual = env.dual(0.0).unwrap();
    let n_gru = 6;
    let shape = PolicyShape {
        x_dim: dual.x_dim(),
        y_dim: dual.y_dim(),
        n_actions: dual.num_actions(),
        n_x: 4,
        n_y: n_gru,
        n_gru,
        mode,
        option_recurrent: true,
    };
    let mut rng = rng_from_seed(seed);
    let mut p = PolicyParams::init(shape, &mut rng).unwrap();
    for t in p.store.tensors_mut() {
        t.values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..=1.0));
    }
    (p, dual)
}

/// Steps a policy by hand and checks the state-threading invariants:
/// `h_t = o_t` on acquisitions, `o_last` untouched otherwise, `C = Σσ`.
pub fn check_state_threading(env: &EnvSpec, mode: OptionMode, seed: u64) -> Result<(), String> {
    let (policy, mut dual) = random_policy(env, mode, seed);
    let mut tape = Tape::new();
    let mut rng = bonn::rng_from_stream(seed, 2);
    let mut obs = dual.reset(seed);
    let mut state = policy.initial_state(&mut tape);
    let opts = StepOptions::default();
    let mut sigmas = 0;
    let mut steps = 0;
    loop {
        let before_o = tape.value(state.o_last).to_vec();
        let (a, trace, next) = policy
            .policy_step(
                &mut tape,
                &state,
                &obs,
                || dual.high_level(),
                &mut rng,
                &opts,
            )
            .map_err(|e| e.to_string())?;
        if trace.sigma {
            sigmas += 1;
            if next.h != next.o_last || tape.value(next.h) != tape.value(next.o_last) {
                return Err(format!("t = {}: h differs from the new option", trace.t));
            }
            if let OptionMode::Discrete(_) = mode {
                let emb = policy.store.get(policy.option_embeddings.unwrap());
                let n = policy.shape.n_gru;
                let i = trace
                    .option_index
                    .ok_or("discrete acquisition without index")?;
                if tape.value(next.h) != &emb.values()[i * n..(i + 1) * n] {
                    return Err("option state is not an embedding row".into());
                }
            }
        } else if next.o_last != state.o_last || tape.value(next.o_last) != before_o.as_slice() {
            return Err(format!(
                "t = {}: o_last changed without acquisition",
                trace.t
            ));
        }
        let (o, _, done) = dual.step(a).map_err(|e| e.to_string())?;
        steps += 1;
        obs = o;
        state = next;
        if done {
            break;
        }
    }
    let rollout = policy
        .rollout(&mut env.dual(0.0).unwrap(), seed, &opts)
        .map_err(|e| e.to_string())?;
    let c = rollout.trace.steps.iter().filter(|s| s.sigma).count();
    if rollout.trace.cost != c || c > rollout.trace.length {
        return Err(format!("C = {} but Σσ = {c}", rollout.trace.cost));
    }
    if rollout.trace.length != steps || rollout.trace.cost != sigmas {
        return Err("hand-stepped episode disagrees with rollout".into());
    }
    Ok(())
}

/// A trace with the given rewards and acquisitions and placeholder nodes.
pub fn trace_from(rewards: &[f64], sigmas: &[bool]) -> EpisodeTrace {
    let mut tape = Tape::new();
    let dummy = tape.constant(&[0.0]);
    let steps = rewards
        .iter()
        .zip(sigmas)
        .enumerate()
        .map(|(t, (&reward, &sigma))| StepTrace {
            t,
            sigma,
            acquisition_probability: 0.5,
            log_p_sigma: None,
            action: 0,
            action_probabilities: vec![1.0],
            log_p_action: dummy,
            option_index: None,
            log_p_option: None,
            entropy: None,
            reward,
            option_snapshot: None,
            position: None,
            region: None,
            goal_annotation: 0,
        })
        .collect();
    EpisodeTrace::new(steps, None)
}
