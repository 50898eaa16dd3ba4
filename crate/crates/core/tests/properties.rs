mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use nxpvm::lambda_cps::{check_simulation, random_closed_program, SimulationCheck};
use nxpvm::memory_engine::{
    ChunkStrategy, ClusterMemory, ClusterStrategy, Engine, LearningStrategy, LiftedState, Program,
    ScriptStrategy, TransitionSystem, UnfoldEnd,
};
use nxpvm::nxp_lang::{random_expr, run_episode, DEFAULT_BUDGET};
use nxpvm::stack_vm::{vm_run, Learn, Mode, VmConfig};

fn engine<S: LearningStrategy + 'static>(strategy: S, rng: &mut ChaCha8Rng) -> Engine<S> {
    Engine::new(strategy, random_env(rng, &ATOMS))
}

fn bottom_absorbs<S: LearningStrategy + 'static>(
    strategy: S,
    seed: u64,
) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = engine(strategy, &mut rng).with_budget(1);
    let mem = S::Memory::default();
    let t1 = random_task(&mut rng, 3);
    let t2 = random_task(&mut rng, 3);
    let alone = e.run(&Program::Task(t1.clone()), mem.clone(), 1).unwrap();
    let composed = e
        .run(&Program::seq(Program::Task(t1), Program::Task(t2)), mem, 2)
        .unwrap();
    if let LiftedState::Bottom { reason, .. } = alone {
        prop_assert_eq!(composed.bottom_reason(), Some(reason));
        let expected = alone_trace(&e, seed)?;
        prop_assert_eq!(composed.trace(), &expected);
    }
    Ok(())
}

/// Trace of the first task alone, regenerated from the same seed.
fn alone_trace<S: LearningStrategy + 'static>(
    e: &Engine<S>,
    seed: u64,
) -> Result<Vec<(usize, nxpvm::trace::TraceEvent)>, TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let _ = random_env(&mut rng, &ATOMS);
    let t1 = random_task(&mut rng, 3);
    Ok(e.run(&Program::Task(t1), S::Memory::default(), 1)
        .unwrap()
        .trace()
        .clone())
}

fn detection_is_pure<S: LearningStrategy + 'static>(
    strategy: S,
    seed: u64,
) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = engine(strategy, &mut rng);
    let mem = warm_memory(&e, &mut rng, 4);
    let t = random_task(&mut rng, 3);
    let (run, _) = e.perform(&t, &mem, 0).unwrap();
    let first = e.strategy.detect_unexpected(&run, &mem, &t);
    let copy = mem.clone();
    prop_assert_eq!(first, e.strategy.detect_unexpected(&run, &copy, &t));
    prop_assert_eq!(
        first,
        e.strategy.detect_unexpected(&run.clone(), &mem, &t.clone())
    );
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bottom_is_absorbing(seed in any::<u64>()) {
        bottom_absorbs(ScriptStrategy, seed)?;
        bottom_absorbs(ChunkStrategy, seed)?;
        bottom_absorbs(ClusterStrategy::default(), seed)?;
    }

    #[test]
    fn zero_fuel_composition_is_bottom(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = engine(ChunkStrategy, &mut rng);
        let p = Program::seq(Program::Task(random_task(&mut rng, 3)), Program::Task(random_task(&mut rng, 3)));
        let out = e.run(&p, Default::default(), 0).unwrap();
        prop_assert!(out.bottom_reason().is_some());
    }

    #[test]
    fn detect_unexpected_is_pure(seed in any::<u64>()) {
        detection_is_pure(ScriptStrategy, seed)?;
        detection_is_pure(ChunkStrategy, seed)?;
        detection_is_pure(ClusterStrategy::default(), seed)?;
    }

    #[test]
    fn script_phi_never_forgets(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = engine(ScriptStrategy, &mut rng);
        let mut mem = warm_memory(&e, &mut rng, 3);
        for _ in 0..6 {
            let t = random_task(&mut rng, 2);
            let (run, _) = e.perform(&t, &mem, 0).unwrap();
            let next = e.strategy.phi(&run, &mem);
            for (sig, script) in &mem.scripts {
                prop_assert_eq!(next.scripts.get(sig), Some(script));
            }
            for (key, count) in &mem.deviations {
                prop_assert!(next.deviations.get(key).is_some_and(|c| c >= count));
            }
            prop_assert!(next.deviations.values().all(|&c| c >= 1));
            mem = next;
        }
    }

    #[test]
    fn chunk_phi_never_forgets(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = engine(ChunkStrategy, &mut rng);
        let mut mem = warm_memory(&e, &mut rng, 3);
        for _ in 0..6 {
            let t = random_task(&mut rng, 2);
            let (run, _) = e.perform(&t, &mem, 0).unwrap();
            let next = e.strategy.phi(&run, &mem);
            for (cond, answer) in &mem.rules {
                prop_assert_eq!(next.rules.get(cond), Some(answer));
            }
            mem = next;
        }
    }

    #[test]
    fn every_clustered_episode_sits_in_one_leaf(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mem = ClusterMemory::default();
        for _ in 0..n {
            mem.insert(random_features(&mut rng), 0.5);
        }
        prop_assert_eq!(mem.episode_count(), n);
        for leaf in &mem.leaves {
            prop_assert!(!leaf.members.is_empty());
            let freq = leaf.frequencies();
            for f in &leaf.centroid {
                prop_assert!(2 * freq[f.as_str()] > leaf.members.len());
            }
        }
    }

    #[test]
    fn unfolding_is_bounded_by_fuel(
        steps in proptest::collection::btree_map(0u32..12, 0u32..14, 0..12),
        start in 0u32..12,
        fuel in 0usize..20,
    ) {
        // 12 is final, 13 is omega; drop steps out of terminals.
        let step: BTreeMap<u32, u32> = steps.into_iter().filter(|(from, _)| *from < 12).collect();
        let sys = TransitionSystem::new(
            (0..12).collect(),
            [12].into_iter().collect(),
            13,
            [(12, true)].into_iter().collect(),
            step.clone(),
        ).unwrap();
        let u = sys.unfold(start, fuel);
        prop_assert!(u.visited.len() <= fuel);
        let mut chain = vec![];
        let mut c = start;
        while chain.len() < fuel {
            match step.get(&c) {
                Some(&n) => { chain.push(n); c = n; if n >= 12 { break; } }
                None => break,
            }
        }
        let reaches_final = c == 12;
        prop_assert_eq!(matches!(u.end, UnfoldEnd::Final(_)), reaches_final);
        prop_assert_eq!(u.visited, chain);
    }

    #[test]
    fn composition_law_holds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks: Vec<_> = (0..rng.gen_range(2..6)).map(|_| random_task(&mut rng, 3)).collect();
        let p = Program::sequence(&tasks).unwrap();
        let fuel = rng.gen_range(0..7);
        let e = engine(ClusterStrategy::default(), &mut rng);
        prop_assert_eq!(e.run(&p, Default::default(), fuel).unwrap(), e.run_direct(&p, Default::default(), fuel).unwrap());
        let e = engine(ScriptStrategy, &mut rng);
        prop_assert_eq!(e.run(&p, Default::default(), fuel).unwrap(), e.run_direct(&p, Default::default(), fuel).unwrap());
    }

    #[test]
    fn cps_simulates_cbv(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_closed_program(&mut rng, 12);
        let check = check_simulation(&t, 1000);
        prop_assert!(!matches!(check, SimulationCheck::Failed { .. }), "{:?}", check);
    }

    #[test]
    fn vm_agrees_with_the_evaluator(seed in any::<u64>(), per_step in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms = ["a", "b", "c"];
        let e = random_expr(&mut rng, 6, &atoms, 0.3);
        let env = random_env(&mut rng, &atoms);
        let config = VmConfig {
            learn: Learn::Chunk,
            mode: if per_step { Mode::PerStep } else { Mode::PerEpisode },
            budget: DEFAULT_BUDGET,
        };
        let vm = vm_run(&e, &env, &config).unwrap();
        let ep = run_episode(&e, &env, DEFAULT_BUDGET).unwrap();
        prop_assert_eq!(vm.value, ep.main_value);
        prop_assert_eq!(vm.drained, ep.drained);
    }

    #[test]
    fn truth_matches_the_oracle_with_posts(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms = ["a", "b", "c"];
        let e = random_expr(&mut rng, 6, &atoms, 0.3);
        let env = random_env(&mut rng, &atoms);
        let ep = run_episode(&e, &env, DEFAULT_BUDGET).unwrap();
        prop_assert_eq!((ep.main_value, ep.drained), drain_oracle(&e, &env));
    }
}

#[test]
fn first_look_goals_come_from_the_centroid() {
    let s = ClusterStrategy {
        threshold: 0.5,
        k: 2,
    };
    let mut mem = ClusterMemory::default();
    let f = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
    mem.insert(f(&["a", "b", "c"]), s.threshold);
    mem.insert(f(&["a", "b"]), s.threshold);
    mem.insert(f(&["a", "b", "d"]), s.threshold);
    let t = nxpvm::memory_engine::Task::new("q", &["a"], nxpvm::nxp_lang::Expr::atom("a"));
    let goals: Vec<String> = s
        .expectation(&mem, &t)
        .iter()
        .map(|g| g.to_string())
        .collect();
    assert_eq!(goals, ["a", "b"]);
}
