//! Acceptance criteria 1-10. Each prints one PASS/FAIL line; the test fails
//! if any criterion does.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use nxpvm::lambda_cps::simulation_suite;
use nxpvm::memory_engine::{
    drain_order, episode_metrics, ChunkStrategy, ClusterMemory, ClusterStrategy, Cont, Engine,
    LearningStrategy, LiftedState, Program, RuleMemory, ScriptMemory, ScriptStrategy, Sigma, Task,
    UnexpectedSignal,
};
use nxpvm::nxp_lang::{
    enumerate_post_free, eval_on, random_expr, run_episode, Environment, Expr, DEFAULT_BUDGET,
};
use nxpvm::stack_vm::{
    reduce_to_single, DualStore, Learn, Machine, Mode, VmConfig, VmResult, VmSession,
};
use nxpvm::trace::TraceEvent;
use nxpvm::triples::{run_all, GoalAgenda, Law, Mutation};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn c1_laws() -> Verdict {
    let start = Instant::now();
    let reports = run_all(1000, 1, None);
    let failing: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.results
                .iter()
                .filter(|l| !l.passed())
                .map(move |l| format!("{} {}", r.instance, l.law))
        })
        .collect();
    let drop_state = run_all(1000, 1, Some(Mutation::DropState));
    let drop_caught = drop_state
        .iter()
        .any(|r| r.result(Law::RightUnit).is_some_and(|l| !l.passed()));
    let skip_bind = run_all(1000, 1, Some(Mutation::SkipBind));
    let skip_caught = skip_bind.iter().all(|r| !r.all_passed());
    let elapsed = start.elapsed();
    let pairs: usize = reports.iter().map(|r| r.results.len()).sum();
    verdict(
        failing.is_empty() && pairs == 12 && drop_caught && skip_caught && within(Duration::from_secs(10), elapsed),
        format!(
            "{pairs} law/instance pairs x 1000 trials, failing {failing:?}; drop-state caught {drop_caught}, skip-bind caught {skip_caught}; {:.2}s (limit 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_cps() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let report = simulation_suite(&mut rng, 500, 12);
    let elapsed = start.elapsed();
    verdict(
        report.checked >= 500 && report.failed == 0 && within(Duration::from_secs(30), elapsed),
        format!(
            "{} terms checked ({} with beta steps), {} failed, {} skipped as non-normalizing; {:.2}s (limit 30s){}",
            report.checked,
            report.reducing,
            report.failed,
            report.skipped,
            elapsed.as_secs_f64(),
            report.first_failure.map(|f| format!("; first failure {f}")).unwrap_or_default()
        ),
    )
}

fn c3_truth_table() -> Verdict {
    let exprs = enumerate_post_free(&["a", "b"], 4);
    let mut mismatches = 0;
    let mut checked = 0;
    for (va, vb) in [(false, false), (false, true), (true, false), (true, true)] {
        let env: Environment = [("a".to_string(), va), ("b".to_string(), vb)]
            .into_iter()
            .collect();
        for e in &exprs {
            checked += 1;
            let out = eval_on(e, &env, GoalAgenda::new()).unwrap();
            if out.value != truth(e, &env) || !out.agenda.is_empty() {
                mismatches += 1;
            }
        }
    }
    verdict(
        mismatches == 0 && exprs.len() == 81_610,
        format!(
            "{} expressions x 4 environments = {checked} evaluations, {mismatches} mismatches",
            exprs.len()
        ),
    )
}

fn c4_evocation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let atoms = ["a", "b", "c"];
    let (mut order_bad, mut drain_bad, mut with_posts) = (0, 0, 0);
    for _ in 0..500 {
        let e = random_expr(&mut rng, 6, &atoms, 0.35);
        let env = random_env(&mut rng, &atoms);
        let mut expected = Vec::new();
        posts_in_order(&e, &mut expected);
        if !expected.is_empty() {
            with_posts += 1;
        }
        let out = eval_on(&e, &env, GoalAgenda::new()).unwrap();
        if out.agenda.0 != expected {
            order_bad += 1;
        }
        let ep = run_episode(&e, &env, DEFAULT_BUDGET).unwrap();
        if (ep.main_value, ep.drained) != drain_oracle(&e, &env) {
            drain_bad += 1;
        }
    }
    verdict(
        order_bad == 0 && drain_bad == 0,
        format!("500 expressions ({with_posts} with posts): {order_bad} agenda-order mismatches, {drain_bad} drain mismatches"),
    )
}

/// Answer, bottom reason, drain order and memory of a run.
fn observe<M: Clone>(
    s: &LiftedState<M>,
) -> (
    Option<bool>,
    Option<nxpvm::trace::BottomReason>,
    Vec<(usize, Expr)>,
    Option<M>,
) {
    (
        s.answer(),
        s.bottom_reason(),
        drain_order(s.trace()),
        s.memory().cloned(),
    )
}

/// Compare the direct run of `t1; t2`, the denotation, and the right-hand
/// side of the composition law written out by hand.
fn composition_instances<S: LearningStrategy + 'static>(
    strategy: S,
    seed: u64,
    n: usize,
) -> (usize, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut agree, mut bottoms, mut unexpected) = (0, 0, 0);
    let strategy = Rc::new(strategy);
    for _ in 0..n {
        let engine = Engine {
            strategy: Rc::clone(&strategy),
            env: random_env(&mut rng, &ATOMS),
            budget: if rng.gen_bool(0.2) {
                rng.gen_range(1..4)
            } else {
                DEFAULT_BUDGET
            },
        };
        let warm = rng.gen_range(0..5);
        let mem = warm_memory(&engine.clone().with_budget(DEFAULT_BUDGET), &mut rng, warm);
        let t1 = random_task(&mut rng, 3);
        let t2 = random_task(&mut rng, 3);
        let fuel = if rng.gen_bool(0.2) {
            rng.gen_range(0..2)
        } else {
            2
        };
        let program = Program::seq(Program::Task(t1.clone()), Program::Task(t2.clone()));

        let lhs = engine.run_direct(&program, mem.clone(), fuel).unwrap();
        let denoted = engine.run(&program, mem.clone(), fuel).unwrap();

        let xi = Engine::<S>::terminal();
        let mu = engine.phi_then(Rc::clone(&xi));
        let e2 = engine.clone();
        let (xi2, mu2) = (Rc::clone(&xi), Rc::clone(&mu));
        let t2_then: Cont<S::Memory> = Rc::new(move |s| e2.execute(&t2, &xi2, &mu2, s));
        let phi_t2 = engine.phi_then(Rc::clone(&t2_then));
        let rhs = engine
            .execute(&t1, &t2_then, &phi_t2, Sigma::new(mem, fuel))
            .unwrap();

        if observe(&lhs) == observe(&rhs)
            && observe(&denoted) == observe(&rhs)
            && lhs.trace() == rhs.trace()
        {
            agree += 1;
        }
        if rhs.bottom_reason().is_some() {
            bottoms += 1;
        }
        if episode_metrics(rhs.trace()).iter().any(|m| m.unexpected) {
            unexpected += 1;
        }
    }
    (agree, bottoms, unexpected)
}

fn c5_composition() -> Verdict {
    let n = 250;
    let runs = [
        ("script", composition_instances(ScriptStrategy, 51, n)),
        ("chunk", composition_instances(ChunkStrategy, 52, n)),
        (
            "cluster",
            composition_instances(ClusterStrategy::default(), 53, n),
        ),
    ];
    let pass = runs.iter().all(|(_, (agree, _, _))| *agree == n);
    let detail = runs
        .iter()
        .map(|(name, (agree, bottoms, unexp))| {
            format!("{name} {agree}/{n} agree ({bottoms} bottom, {unexp} unexpected)")
        })
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, detail)
}

fn c6_power_law() -> Verdict {
    let env: Environment = [("a", true), ("b", false), ("c", true)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let goal = nxpvm::nxp_lang::parse_expr("(a and b) or (c and a post (b))").unwrap();
    let task = Task::new("practice", &["a", "c"], goal.clone());
    let tasks = vec![task; 10];
    let engine = Engine::new(ChunkStrategy, env.clone());
    let out = engine
        .run(
            &Program::sequence(&tasks).unwrap(),
            RuleMemory::default(),
            10,
        )
        .unwrap();
    let m = episode_metrics(out.trace());
    let steps: Vec<u64> = m.iter().map(|e| e.steps).collect();
    let hits = out
        .trace()
        .iter()
        .filter(|(ep, e)| *ep >= 1 && matches!(e, TraceEvent::CacheHit { .. }))
        .count();
    let engine_ok = m.len() == 10
        && m[0].unexpected
        && steps.windows(2).all(|w| w[1] <= w[0])
        && steps[1] < steps[0]
        && hits == 9
        && steps[1..].iter().all(|&s| s == 1);

    let mut session = VmSession::new(VmConfig {
        learn: Learn::Chunk,
        mode: Mode::PerEpisode,
        budget: DEFAULT_BUDGET,
    });
    let vm: Vec<VmResult> = (0..10).map(|_| session.run(&goal, &env).unwrap()).collect();
    let vm_steps: Vec<u64> = vm.iter().map(|r| r.step_count).collect();
    let vm_ok = vm[0].impasses >= 1
        && vm_steps.windows(2).all(|w| w[1] <= w[0])
        && vm_steps[1] < vm_steps[0];
    verdict(
        engine_ok && vm_ok,
        format!(
            "engine steps {steps:?} (cache hits on reps 2-10: {hits}); stack machine pops {vm_steps:?} ({} impasses on rep 1)",
            vm[0].impasses
        ),
    )
}

fn twice<S: LearningStrategy + 'static>(strategy: S, seed: u64, n: usize) -> (usize, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strategy = Rc::new(strategy);
    let (mut same_answer, mut steps_ok, mut compared) = (0, 0, 0);
    for _ in 0..n {
        let engine = Engine {
            strategy: Rc::clone(&strategy),
            env: random_env(&mut rng, &ATOMS),
            budget: DEFAULT_BUDGET,
        };
        let warm = rng.gen_range(0..5);
        let mem = warm_memory(&engine, &mut rng, warm);
        let mut t = random_task(&mut rng, 3);
        t.signal = UnexpectedSignal::Strategy;
        let once = engine
            .run(&Program::Task(t.clone()), mem.clone(), 2)
            .unwrap();
        let seq = Program::seq(Program::Task(t.clone()), Program::Task(t));
        let twice = engine.run(&seq, mem, 2).unwrap();
        if once.answer() == twice.answer() && once.answer().is_some() {
            same_answer += 1;
        }
        let m = episode_metrics(twice.trace());
        if m.len() == 2 {
            compared += 1;
            if m[1].steps <= m[0].steps {
                steps_ok += 1;
            }
        }
    }
    (same_answer, steps_ok, compared)
}

fn c7_contextual() -> Verdict {
    let n = 200;
    let script = twice(ScriptStrategy, 71, n);
    let chunk = twice(ChunkStrategy, 72, n);
    let cluster = twice(ClusterStrategy::default(), 73, n);
    let pass =
        script.0 == n && chunk.0 == n && cluster.0 == n && chunk.1 == chunk.2 && chunk.2 == n;
    verdict(
        pass,
        format!(
            "answer(t;t) = answer(t): script {}/{n}, chunk {}/{n}, cluster {}/{n}; chunk second run no slower {}/{}",
            script.0, chunk.0, cluster.0, chunk.1, chunk.2
        ),
    )
}

fn c8_script_reminding() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = 0;
    let engine = Engine::new(ScriptStrategy, Environment::new());
    for i in 0..100 {
        let goal = loop {
            let g = random_expr(&mut rng, 4, &ATOMS, 0.2);
            if g.depth() >= 2 {
                break g;
            }
        };
        let base_env = random_env(&mut rng, &ATOMS);
        let read: Vec<String> = goal.erase_posts().atoms().into_iter().collect();
        let flip = read.choose(&mut rng).unwrap().clone();
        let mut dev_env = base_env.clone();
        dev_env.set(flip.clone(), !base_env.get(&flip).unwrap());
        let id = format!("script{i}");
        let base = Task::new(id.clone(), &["scene"], goal.clone()).with_bindings(base_env);
        let dev = Task::new(id, &["scene"], goal).with_bindings(dev_env);
        let p = Program::sequence(&[base, dev.clone(), dev]).unwrap();
        let out = engine.run(&p, ScriptMemory::default(), 3).unwrap();
        let flags: Vec<bool> = episode_metrics(out.trace())
            .iter()
            .map(|m| m.unexpected)
            .collect();
        let counts_ok = out
            .memory()
            .is_some_and(|m| !m.deviations.is_empty() && m.deviations.values().all(|&c| c == 2));
        if flags == [true, true, false] && counts_ok {
            ok += 1;
        }
    }
    verdict(
        ok == 100,
        format!("{ok}/100 pairs: unexpected on first deviation, reminded on second"),
    )
}

fn noisy(rng: &mut ChaCha8Rng, proto: &BTreeSet<String>, universe: &[String]) -> BTreeSet<String> {
    let mut s: BTreeSet<String> = proto
        .iter()
        .filter(|_| rng.gen_bool(0.85))
        .cloned()
        .collect();
    if rng.gen_bool(0.5) {
        s.insert(universe.choose(rng).unwrap().clone());
    }
    if s.is_empty() {
        s.insert(proto.iter().next().unwrap().clone());
    }
    s
}

fn c9_cluster_retrieval() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let universe: Vec<String> = (0..40).map(|i| format!("f{i:02}")).collect();
    let protos: Vec<BTreeSet<String>> = universe
        .chunks(5)
        .map(|c| c.iter().cloned().collect())
        .collect();
    let mut mem = ClusterMemory::default();
    let mut stored = Vec::new();
    for _ in 0..200 {
        let p = protos.choose(&mut rng).unwrap();
        let ep = noisy(&mut rng, p, &universe);
        mem.insert(ep.clone(), ClusterStrategy::default().threshold);
        stored.push(ep);
    }
    let mut agree = 0;
    for _ in 0..200 {
        let p = protos.choose(&mut rng).unwrap();
        let probe = noisy(&mut rng, p, &universe);
        let best = stored
            .iter()
            .map(|s| nxpvm::memory_engine::strategies::jaccard(&probe, s))
            .fold(f64::MIN, f64::max);
        let nearest: Vec<&BTreeSet<String>> = stored
            .iter()
            .filter(|s| nxpvm::memory_engine::strategies::jaccard(&probe, s) == best)
            .collect();
        let (leaf, _) = mem.nearest(&probe).unwrap();
        if nearest.iter().any(|n| mem.leaves[leaf].members.contains(n)) {
            agree += 1;
        }
    }
    let rate = agree as f64 / 200.0;
    verdict(
        rate >= 0.95,
        format!(
            "{agree}/200 probes ({:.1}%) retrieve the cluster holding a brute-force nearest episode; {} leaves over {} episodes (need >= 95%)",
            rate * 100.0,
            mem.leaves.len(),
            mem.episode_count()
        ),
    )
}

fn strip_merge(r: &VmResult) -> VmResult {
    let mut r = r.clone();
    r.events.retain(|e| !matches!(e, TraceEvent::Merge { .. }));
    r
}

fn c10_stack_vm() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let atoms = ["a", "b", "c", "d"];
    let learns = [Learn::Identity, Learn::Empty, Learn::Chunk, Learn::Expect];
    let mut oracle_ok = 0;
    for _ in 0..200 {
        let e = random_expr(&mut rng, 6, &atoms, 0.3);
        let env = random_env(&mut rng, &atoms);
        let config = VmConfig {
            learn: learns.choose(&mut rng).unwrap().clone(),
            mode: if rng.gen_bool(0.5) {
                Mode::PerStep
            } else {
                Mode::PerEpisode
            },
            budget: if rng.gen_bool(0.2) {
                rng.gen_range(1..4)
            } else {
                DEFAULT_BUDGET
            },
        };
        let vm = Machine::start(DualStore::default(), &e, &env, &[], &config)
            .unwrap()
            .run();
        let ep = run_episode(&e, &env, config.budget).unwrap();
        if vm.value == ep.main_value
            && vm.drained == ep.drained
            && vm.budget_exhausted == ep.budget_exhausted
        {
            oracle_ok += 1;
        }
    }
    let mut reduce_ok = 0;
    let mut mid = 0;
    for _ in 0..200 {
        let config = VmConfig {
            learn: learns.choose(&mut rng).unwrap().clone(),
            mode: if rng.gen_bool(0.5) {
                Mode::PerStep
            } else {
                Mode::PerEpisode
            },
            budget: DEFAULT_BUDGET,
        };
        let mut session = VmSession::new(config.clone());
        for _ in 0..rng.gen_range(0..3) {
            let warm = random_expr(&mut rng, 4, &atoms, 0.3);
            session.run(&warm, &random_env(&mut rng, &atoms)).unwrap();
        }
        let e = random_expr(&mut rng, 6, &atoms, 0.3);
        let env = random_env(&mut rng, &atoms);
        let store = DualStore {
            solve: Vec::new(),
            skill: session.skill.clone(),
        };
        let mut dual = Machine::start(store, &e, &env, &session.expectations(), &config).unwrap();
        let full = dual.clone().run().step_count;
        let stop = rng.gen_range(0..=full);
        for _ in 0..stop {
            dual.step();
        }
        if !dual.store().solve.is_empty() {
            mid += 1;
        }
        let single = reduce_to_single(dual.clone());
        if dual.run() == strip_merge(&single.run()) {
            reduce_ok += 1;
        }
    }
    verdict(
        oracle_ok == 200 && reduce_ok == 200,
        format!(
            "vm_run = run_episode on {oracle_ok}/200 programs; reduced machine matches on {reduce_ok}/200 snapshots ({mid} with work pending)"
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("monad laws", c1_laws),
        ("CPS simulation", c2_cps),
        ("evaluator truth tables", c3_truth_table),
        ("goal evocation order", c4_evocation),
        ("composition equality", c5_composition),
        ("power law of practice", c6_power_law),
        ("contextual equivalence", c7_contextual),
        ("script reminding", c8_script_reminding),
        ("cluster retrieval", c9_cluster_retrieval),
        ("stack VM equivalence", c10_stack_vm),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {:>2} {name}: {}", i + 1, v.detail);
        if !v.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
