//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use nxpvm::memory_engine::{
    Engine, LearningStrategy, LiftedState, Program, Task, UnexpectedSignal,
};
use nxpvm::nxp_lang::{random_expr, DrainedGoal, Environment, Expr};

pub const ATOMS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// Truth value by direct recursion on the syntax tree.
pub fn truth(e: &Expr, env: &Environment) -> bool {
    match e {
        Expr::Atom(a) => env.get(a).expect("bound"),
        Expr::And(l, r) => truth(l, env) && truth(r, env),
        Expr::Or(l, r) => truth(l, env) || truth(r, env),
        Expr::Posting(b, _) => env.get(b).expect("bound"),
    }
}

/// Posted goals in the order a left-to-right depth-first walk meets them.
/// Posted goals are not entered.
pub fn posts_in_order(e: &Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::Atom(_) => {}
        Expr::And(l, r) | Expr::Or(l, r) => {
            posts_in_order(l, out);
            posts_in_order(r, out);
        }
        Expr::Posting(_, g) => out.push((**g).clone()),
    }
}

/// Episode drain by a queue over the tree walk: every goal's posts join
/// the back of the queue; goals already evaluated are dropped.
pub fn drain_oracle(main: &Expr, env: &Environment) -> (bool, Vec<DrainedGoal>) {
    let mut queue = VecDeque::new();
    let mut posts = Vec::new();
    posts_in_order(main, &mut posts);
    queue.extend(posts);
    let mut done = vec![main.clone()];
    let mut drained = Vec::new();
    while let Some(g) = queue.pop_front() {
        if done.contains(&g) {
            continue;
        }
        let mut posts = Vec::new();
        posts_in_order(&g, &mut posts);
        queue.extend(posts);
        drained.push(DrainedGoal {
            value: truth(&g, env),
            goal: g.clone(),
        });
        done.push(g);
    }
    (truth(main, env), drained)
}

pub fn random_env(rng: &mut ChaCha8Rng, atoms: &[&str]) -> Environment {
    atoms
        .iter()
        .map(|a| (a.to_string(), rng.gen_bool(0.5)))
        .collect()
}

pub fn random_features(rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    let n = rng.gen_range(1..=3);
    ATOMS
        .choose_multiple(rng, n)
        .map(|a| a.to_string())
        .collect()
}

pub fn random_task(rng: &mut ChaCha8Rng, id_pool: usize) -> Task {
    let goal = random_expr(rng, 4, &ATOMS, 0.3);
    let id = format!("t{}", rng.gen_range(0..id_pool));
    Task {
        id,
        features: random_features(rng),
        goal,
        bindings: random_env(rng, &ATOMS),
        signal: match rng.gen_range(0..10) {
            0 => UnexpectedSignal::Always,
            1 => UnexpectedSignal::Never,
            _ => UnexpectedSignal::Strategy,
        },
    }
}

/// Memory after running a few random tasks from empty.
pub fn warm_memory<S: LearningStrategy + 'static>(
    engine: &Engine<S>,
    rng: &mut ChaCha8Rng,
    tasks: usize,
) -> S::Memory {
    let warmup: Vec<Task> = (0..tasks).map(|_| random_task(rng, 4)).collect();
    match Program::sequence(&warmup) {
        None => S::Memory::default(),
        Some(p) => match engine.run_direct(&p, S::Memory::default(), tasks).unwrap() {
            LiftedState::Defined { memory, .. } => memory,
            LiftedState::Bottom { .. } => S::Memory::default(),
        },
    }
}
