//! Bi-continuation problem-solving engine.
//!
//! A task is executed against an environment, an expected continuation
//! (the rest of the task sequence) and an unexpected continuation (the rest
//! of the task sequence in a memory modified by the learning strategy).
//! Sequencing follows
//!
//! ```text
//! [[t1 ; t2]] env exp unexp s
//!     = [[t1]] env {[[t2]] env exp unexp} {phi; [[t2]] env exp unexp} s
//! ```
//!
//! where `phi` is the strategy's weak method. [`Engine::denote`] builds that
//! continuation nesting; [`Engine::run_direct`] is an independent
//! step-by-step loop over the same task list, used to check the equality.

pub mod strategies;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::nxp_lang::{self, DrainedGoal, Environment, EvalEvent, Expr, NxpError};
use crate::trace::{BottomReason, EpisodeMetrics, PhiTrigger, TraceEvent};

pub use strategies::{
    ChunkStrategy, ClusterMemory, ClusterNode, ClusterStrategy, DeviationKey, RuleMemory,
    ScriptMemory, ScriptStrategy,
};

/// Who decides whether a task run is unexpected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnexpectedSignal {
    /// The strategy's `detect_unexpected`.
    #[default]
    Strategy,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub features: BTreeSet<String>,
    pub goal: Expr,
    /// World state for this task; overrides the engine environment.
    #[serde(default)]
    pub bindings: Environment,
    #[serde(default)]
    pub signal: UnexpectedSignal,
}

impl Task {
    pub fn new(id: impl Into<String>, features: &[&str], goal: Expr) -> Task {
        Task {
            id: id.into(),
            features: features.iter().map(|f| f.to_string()).collect(),
            goal,
            bindings: Environment::new(),
            signal: UnexpectedSignal::Strategy,
        }
    }

    pub fn with_bindings(mut self, bindings: Environment) -> Task {
        self.bindings = bindings;
        self
    }

    pub fn with_signal(mut self, signal: UnexpectedSignal) -> Task {
        self.signal = signal;
        self
    }
}

/// What one task execution produced; this is what `phi` learns from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRun {
    pub episode: usize,
    pub task_id: String,
    pub features: BTreeSet<String>,
    pub expectation: Vec<Expr>,
    pub answer: bool,
    pub steps: u64,
    pub cache_hit: bool,
    /// `atom=value` for each atom read, in evaluation order.
    pub labels: Vec<String>,
    pub true_atoms: BTreeSet<String>,
    pub drained: Vec<DrainedGoal>,
    pub budget_exhausted: bool,
}

impl TaskRun {
    /// Task features plus every atom that evaluated true.
    pub fn episode_features(&self) -> BTreeSet<String> {
        self.features.union(&self.true_atoms).cloned().collect()
    }
}

/// The weak method and its long-term memory.
pub trait LearningStrategy {
    type Memory: Clone + Debug + PartialEq + Default + 'static;

    fn name(&self) -> &'static str;

    /// Memory update from a completed task run.
    fn phi(&self, run: &TaskRun, mem: &Self::Memory) -> Self::Memory;

    /// Goals injected ahead of the agenda before a task runs.
    fn expectation(&self, mem: &Self::Memory, task: &Task) -> Vec<Expr>;

    fn detect_unexpected(&self, run: &TaskRun, mem: &Self::Memory, task: &Task) -> bool;

    /// A stored answer that lets the engine skip evaluation.
    fn recall(&self, _mem: &Self::Memory, _task: &Task) -> Option<bool> {
        None
    }

    /// Learning applied on the expected path at episode end, if any.
    fn consolidate(&self, _run: &TaskRun, _mem: &Self::Memory) -> Option<Self::Memory> {
        None
    }
}

/// Event log of a run, each event tagged with its episode index.
pub type ExecutionTrace = Vec<(usize, TraceEvent)>;

/// Engine state threaded through continuations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sigma<M> {
    pub memory: M,
    pub trace: ExecutionTrace,
    pub last: Option<TaskRun>,
    pub fuel: usize,
    pub episode: usize,
}

impl<M> Sigma<M> {
    pub fn new(memory: M, fuel: usize) -> Self {
        Sigma {
            memory,
            trace: Vec::new(),
            last: None,
            fuel,
            episode: 0,
        }
    }
}

/// The flat lattice of answers with an explicit bottom.
#[derive(Debug, Clone, PartialEq)]
pub enum LiftedState<M> {
    Defined {
        answer: Option<bool>,
        memory: M,
        trace: ExecutionTrace,
    },
    Bottom {
        reason: BottomReason,
        trace: ExecutionTrace,
    },
}

impl<M> LiftedState<M> {
    pub fn answer(&self) -> Option<bool> {
        match self {
            LiftedState::Defined { answer, .. } => *answer,
            LiftedState::Bottom { .. } => None,
        }
    }

    pub fn trace(&self) -> &ExecutionTrace {
        match self {
            LiftedState::Defined { trace, .. } | LiftedState::Bottom { trace, .. } => trace,
        }
    }

    pub fn bottom_reason(&self) -> Option<BottomReason> {
        match self {
            LiftedState::Bottom { reason, .. } => Some(*reason),
            LiftedState::Defined { .. } => None,
        }
    }

    pub fn memory(&self) -> Option<&M> {
        match self {
            LiftedState::Defined { memory, .. } => Some(memory),
            LiftedState::Bottom { .. } => None,
        }
    }
}

pub type EngineResult<M> = Result<LiftedState<M>, NxpError>;

/// Continuation from engine state to a final answer.
pub type Cont<M> = Rc<dyn Fn(Sigma<M>) -> EngineResult<M>>;

/// Denotation of a task program awaiting its continuations and state.
pub type Executor<M> = Rc<dyn Fn(Cont<M>, Cont<M>, Sigma<M>) -> EngineResult<M>>;

/// Tasks combined with sequential composition.
#[derive(Debug, Clone, PartialEq)]
pub enum Program {
    Task(Task),
    Seq(Box<Program>, Box<Program>),
}

impl Program {
    pub fn seq(a: Program, b: Program) -> Program {
        Program::Seq(Box::new(a), Box::new(b))
    }

    /// Right-nested sequence of the given tasks.
    pub fn sequence(tasks: &[Task]) -> Option<Program> {
        let (last, rest) = tasks.split_last()?;
        let mut p = Program::Task(last.clone());
        for t in rest.iter().rev() {
            p = Program::seq(Program::Task(t.clone()), p);
        }
        Some(p)
    }

    pub fn tasks(&self) -> Vec<&Task> {
        match self {
            Program::Task(t) => vec![t],
            Program::Seq(a, b) => {
                let mut v = a.tasks();
                v.extend(b.tasks());
                v
            }
        }
    }
}

pub struct Engine<S: LearningStrategy> {
    pub strategy: Rc<S>,
    pub env: Environment,
    pub budget: usize,
}

impl<S: LearningStrategy> Clone for Engine<S> {
    fn clone(&self) -> Self {
        Engine {
            strategy: Rc::clone(&self.strategy),
            env: self.env.clone(),
            budget: self.budget,
        }
    }
}

fn label(name: &str, value: bool) -> String {
    format!("{name}={value}")
}

impl<S: LearningStrategy + 'static> Engine<S> {
    pub fn new(strategy: S, env: Environment) -> Self {
        Engine {
            strategy: Rc::new(strategy),
            env,
            budget: nxp_lang::DEFAULT_BUDGET,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    /// Environment a task runs in: engine bindings, then task bindings,
    /// then task features as true atoms, then unbound expectation atoms as
    /// false.
    pub fn task_env(&self, task: &Task, expectation: &[Expr]) -> Environment {
        let mut env = self.env.clone();
        for (k, v) in &task.bindings.0 {
            env.set(k.clone(), *v);
        }
        for f in &task.features {
            env.bind_default(f.clone(), true);
        }
        for goal in expectation {
            for atom in goal.atoms() {
                env.bind_default(atom, false);
            }
        }
        env
    }

    /// Run one task in a fixed memory, without deciding anything about
    /// continuations.
    pub fn perform(
        &self,
        task: &Task,
        mem: &S::Memory,
        episode: usize,
    ) -> Result<(TaskRun, Vec<TraceEvent>), NxpError> {
        let expectation = self.strategy.expectation(mem, task);
        let mut events = vec![TraceEvent::TaskStart {
            task: task.id.clone(),
        }];
        if !expectation.is_empty() {
            events.push(TraceEvent::Expectation {
                goals: expectation.clone(),
            });
        }
        let mut run = TaskRun {
            episode,
            task_id: task.id.clone(),
            features: task.features.clone(),
            expectation: expectation.clone(),
            answer: false,
            steps: 1,
            cache_hit: false,
            labels: Vec::new(),
            true_atoms: BTreeSet::new(),
            drained: Vec::new(),
            budget_exhausted: false,
        };
        if let Some(answer) = self.strategy.recall(mem, task) {
            run.answer = answer;
            run.cache_hit = true;
            events.push(TraceEvent::CacheHit { answer });
        } else {
            let env = self.task_env(task, &expectation);
            let (result, eval_events) =
                nxp_lang::run_episode_traced(&task.goal, &env, &expectation, self.budget)?;
            for ev in &eval_events {
                let (name, value) = match ev {
                    EvalEvent::Atom { name, value } => (name, *value),
                    EvalEvent::Post { base, value, .. } => (base, *value),
                    _ => continue,
                };
                run.labels.push(label(name, value));
                if value {
                    run.true_atoms.insert(name.clone());
                }
            }
            run.answer = result.main_value;
            run.steps = result.steps;
            run.drained = result.drained;
            run.budget_exhausted = result.budget_exhausted;
            events.extend(eval_events.into_iter().map(TraceEvent::Eval));
        }
        events.push(TraceEvent::TaskEnd {
            task: task.id.clone(),
            answer: run.answer,
            steps: run.steps,
        });
        Ok((run, events))
    }

    fn signal(&self, task: &Task, run: &TaskRun, mem: &S::Memory) -> bool {
        match task.signal {
            UnexpectedSignal::Always => true,
            UnexpectedSignal::Never => false,
            UnexpectedSignal::Strategy => self.strategy.detect_unexpected(run, mem, task),
        }
    }

    /// `[[t]] env exp unexp sigma`.
    pub fn execute(
        &self,
        task: &Task,
        exp: &Cont<S::Memory>,
        unexp: &Cont<S::Memory>,
        mut sigma: Sigma<S::Memory>,
    ) -> EngineResult<S::Memory> {
        if sigma.fuel == 0 {
            return Ok(bottom(BottomReason::FuelExhausted, sigma));
        }
        sigma.fuel -= 1;
        let episode = sigma.episode;
        let (run, events) = self.perform(task, &sigma.memory, episode)?;
        sigma.trace.extend(events.into_iter().map(|e| (episode, e)));
        if run.budget_exhausted {
            return Ok(bottom(BottomReason::ReachedOmega, sigma));
        }
        let unexpected = self.signal(task, &run, &sigma.memory);
        sigma
            .trace
            .push((episode, TraceEvent::Unexpected { flag: unexpected }));
        sigma.episode += 1;
        if unexpected {
            sigma.last = Some(run);
            unexp(sigma)
        } else {
            if let Some(updated) = self.strategy.consolidate(&run, &sigma.memory) {
                sigma.memory = updated;
                sigma
                    .trace
                    .push((episode, self.phi_event(PhiTrigger::EpisodeEnd)));
            }
            sigma.last = Some(run);
            exp(sigma)
        }
    }

    fn phi_event(&self, trigger: PhiTrigger) -> TraceEvent {
        TraceEvent::Phi {
            strategy: self.strategy.name().to_string(),
            trigger,
        }
    }

    /// `[[phi]] env k`: update memory from the last run, then continue.
    pub fn phi_then(&self, then: Cont<S::Memory>) -> Cont<S::Memory> {
        let engine = self.clone();
        Rc::new(move |mut sigma: Sigma<S::Memory>| {
            if let Some(run) = &sigma.last {
                sigma.memory = engine.strategy.phi(run, &sigma.memory);
                sigma
                    .trace
                    .push((run.episode, engine.phi_event(PhiTrigger::Unexpected)));
            }
            then(sigma)
        })
    }

    /// The continuation that ends a run.
    pub fn terminal() -> Cont<S::Memory> {
        Rc::new(|sigma: Sigma<S::Memory>| {
            Ok(LiftedState::Defined {
                answer: sigma.last.as_ref().map(|r| r.answer),
                memory: sigma.memory,
                trace: sigma.trace,
            })
        })
    }

    /// Denotation of a program as an executor over continuations.
    pub fn denote(&self, program: &Program) -> Executor<S::Memory> {
        match program {
            Program::Task(task) => {
                let engine = self.clone();
                let task = task.clone();
                Rc::new(move |exp, unexp, sigma| engine.execute(&task, &exp, &unexp, sigma))
            }
            Program::Seq(first, second) => {
                self.compose_executors(self.denote(first), self.denote(second))
            }
        }
    }

    /// `[[t1 o t2]] exp unexp = [[t1]] {[[t2]] exp unexp} {phi; [[t2]] exp unexp}`.
    pub fn compose_executors(
        &self,
        first: Executor<S::Memory>,
        second: Executor<S::Memory>,
    ) -> Executor<S::Memory> {
        let engine = self.clone();
        Rc::new(move |exp: Cont<S::Memory>, unexp: Cont<S::Memory>, sigma| {
            let second = Rc::clone(&second);
            let then_second: Cont<S::Memory> =
                Rc::new(move |s| second(Rc::clone(&exp), Rc::clone(&unexp), s));
            let after_phi = engine.phi_then(Rc::clone(&then_second));
            first(then_second, after_phi, sigma)
        })
    }

    /// Executor for `t1 o t2`.
    pub fn compose(&self, t1: &Task, t2: &Task) -> Executor<S::Memory> {
        self.denote(&Program::seq(
            Program::Task(t1.clone()),
            Program::Task(t2.clone()),
        ))
    }

    /// Run a program with the top-level continuations: terminal on the
    /// expected path, `phi` then terminal on the unexpected path.
    pub fn run(
        &self,
        program: &Program,
        memory: S::Memory,
        fuel: usize,
    ) -> EngineResult<S::Memory> {
        let exec = self.denote(program);
        let terminal = Self::terminal();
        let unexp = self.phi_then(Rc::clone(&terminal));
        exec(terminal, unexp, Sigma::new(memory, fuel))
    }

    /// Step-by-step run of the same program: execute each task in order,
    /// apply `phi` after unexpected runs, consolidate after expected ones.
    pub fn run_direct(
        &self,
        program: &Program,
        memory: S::Memory,
        fuel: usize,
    ) -> EngineResult<S::Memory> {
        let mut sigma = Sigma::new(memory, fuel);
        for task in program.tasks() {
            if sigma.fuel == 0 {
                return Ok(bottom(BottomReason::FuelExhausted, sigma));
            }
            sigma.fuel -= 1;
            let episode = sigma.episode;
            let (run, events) = self.perform(task, &sigma.memory, episode)?;
            sigma.trace.extend(events.into_iter().map(|e| (episode, e)));
            if run.budget_exhausted {
                return Ok(bottom(BottomReason::ReachedOmega, sigma));
            }
            let unexpected = self.signal(task, &run, &sigma.memory);
            sigma
                .trace
                .push((episode, TraceEvent::Unexpected { flag: unexpected }));
            let (updated, trigger) = if unexpected {
                (
                    Some(self.strategy.phi(&run, &sigma.memory)),
                    PhiTrigger::Unexpected,
                )
            } else {
                (
                    self.strategy.consolidate(&run, &sigma.memory),
                    PhiTrigger::EpisodeEnd,
                )
            };
            if let Some(m) = updated {
                sigma.memory = m;
                sigma.trace.push((episode, self.phi_event(trigger)));
            }
            sigma.last = Some(run);
            sigma.episode += 1;
        }
        Ok(LiftedState::Defined {
            answer: sigma.last.as_ref().map(|r| r.answer),
            memory: sigma.memory,
            trace: sigma.trace,
        })
    }
}

fn bottom<M>(reason: BottomReason, mut sigma: Sigma<M>) -> LiftedState<M> {
    sigma
        .trace
        .push((sigma.episode, TraceEvent::Bottom { reason }));
    LiftedState::Bottom {
        reason,
        trace: sigma.trace,
    }
}

/// Per-episode metrics recovered from a trace.
pub fn episode_metrics(trace: &ExecutionTrace) -> Vec<EpisodeMetrics> {
    let mut by_episode: BTreeMap<usize, EpisodeMetrics> = BTreeMap::new();
    for (episode, event) in trace {
        let m = by_episode
            .entry(*episode)
            .or_insert_with(|| EpisodeMetrics {
                episode: *episode,
                answer: None,
                steps: 0,
                unexpected: false,
                phi_invoked: false,
            });
        match event {
            TraceEvent::TaskEnd { answer, steps, .. } => {
                m.answer = Some(*answer);
                m.steps = *steps;
            }
            TraceEvent::Unexpected { flag } => m.unexpected = *flag,
            TraceEvent::Phi {
                trigger: PhiTrigger::Unexpected,
                ..
            } => m.phi_invoked = true,
            _ => {}
        }
    }
    by_episode.into_values().collect()
}

/// Goals drained per episode, in order.
pub fn drain_order(trace: &ExecutionTrace) -> Vec<(usize, Expr)> {
    let mut out = Vec::new();
    let mut current: BTreeMap<usize, bool> = BTreeMap::new();
    for (episode, event) in trace {
        if let TraceEvent::Eval(EvalEvent::Goal { goal }) = event {
            // The first goal of each episode is the main goal.
            if current.insert(*episode, true).is_some() {
                out.push((*episode, goal.clone()));
            }
        }
    }
    out
}

/// A deterministic transition system: configurations split into
/// initial/intermediate, final and the undefined configuration omega, a
/// valuation on final configurations and a deterministic partial step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionSystem {
    configs: BTreeSet<u32>,
    initial: BTreeSet<u32>,
    finals: BTreeSet<u32>,
    omega: u32,
    valuation: BTreeMap<u32, bool>,
    step: BTreeMap<u32, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DtsError {
    #[error("configuration {0} is both initial and final")]
    Overlap(u32),
    #[error("omega {0} must not be initial or final")]
    OmegaClash(u32),
    #[error("final configuration {0} has no value")]
    MissingValue(u32),
    #[error("configuration {0} has a value but is not final")]
    StrayValue(u32),
    #[error("step is defined on {0}, which is final or omega")]
    StepFromTerminal(u32),
    #[error("step from {0} leads to unknown configuration {1}")]
    UnknownTarget(u32, u32),
}

/// How an unfolding ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnfoldEnd {
    Final(bool),
    Omega,
    /// No step defined from a non-final configuration.
    Stuck,
    FuelExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unfolding {
    pub start: u32,
    /// Configurations entered by steps, in order.
    pub visited: Vec<u32>,
    pub end: UnfoldEnd,
}

impl TransitionSystem {
    pub fn new(
        initial: BTreeSet<u32>,
        finals: BTreeSet<u32>,
        omega: u32,
        valuation: BTreeMap<u32, bool>,
        step: BTreeMap<u32, u32>,
    ) -> Result<Self, DtsError> {
        if let Some(&c) = initial.intersection(&finals).next() {
            return Err(DtsError::Overlap(c));
        }
        if initial.contains(&omega) || finals.contains(&omega) {
            return Err(DtsError::OmegaClash(omega));
        }
        if let Some(&c) = finals.iter().find(|c| !valuation.contains_key(c)) {
            return Err(DtsError::MissingValue(c));
        }
        if let Some(&c) = valuation.keys().find(|c| !finals.contains(c)) {
            return Err(DtsError::StrayValue(c));
        }
        let mut configs: BTreeSet<u32> = initial.union(&finals).copied().collect();
        configs.insert(omega);
        for (&from, &to) in &step {
            if finals.contains(&from) || from == omega {
                return Err(DtsError::StepFromTerminal(from));
            }
            if !configs.contains(&from) {
                return Err(DtsError::UnknownTarget(from, from));
            }
            if !configs.contains(&to) {
                return Err(DtsError::UnknownTarget(from, to));
            }
        }
        Ok(TransitionSystem {
            configs,
            initial,
            finals,
            omega,
            valuation,
            step,
        })
    }

    pub fn configs(&self) -> &BTreeSet<u32> {
        &self.configs
    }

    pub fn omega(&self) -> u32 {
        self.omega
    }

    pub fn is_final(&self, c: u32) -> bool {
        self.finals.contains(&c)
    }

    pub fn is_initial(&self, c: u32) -> bool {
        self.initial.contains(&c)
    }

    pub fn step(&self, c: u32) -> Option<u32> {
        self.step.get(&c).copied()
    }

    /// Follow `step` from `start` for at most `fuel` steps.
    pub fn unfold(&self, start: u32, fuel: usize) -> Unfolding {
        let mut visited = Vec::new();
        let mut current = start;
        loop {
            if let Some(&v) = self.valuation.get(&current) {
                return Unfolding {
                    start,
                    visited,
                    end: UnfoldEnd::Final(v),
                };
            }
            if current == self.omega {
                return Unfolding {
                    start,
                    visited,
                    end: UnfoldEnd::Omega,
                };
            }
            let Some(next) = self.step(current) else {
                return Unfolding {
                    start,
                    visited,
                    end: UnfoldEnd::Stuck,
                };
            };
            if visited.len() == fuel {
                return Unfolding {
                    start,
                    visited,
                    end: UnfoldEnd::FuelExhausted,
                };
            }
            visited.push(next);
            current = next;
        }
    }
}

/// The transition system a task list denotes under one fixed memory.
///
/// Configuration `i` means "about to run task `i`"; `n` is final and
/// `n + 1` is omega. A task after which memory would change (an unexpected
/// run, or consolidation on the expected path) steps to omega: this system
/// cannot continue and the run carries on in the image system under the
/// updated memory.
#[derive(Debug, Clone)]
pub struct TaskSystem {
    pub system: TransitionSystem,
    /// Answer of task `i` when its step does not lead to omega.
    pub answers: Vec<Option<bool>>,
}

/// A point where a run moved to the image system of a new memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Switch<M> {
    /// Index of the first task run under `memory`.
    pub at: usize,
    pub memory: M,
}

impl<S: LearningStrategy + 'static> Engine<S> {
    /// The memory after running `task`, if it differs from `mem`.
    fn memory_after(&self, task: &Task, run: &TaskRun, mem: &S::Memory) -> Option<S::Memory> {
        let updated = if self.signal(task, run, mem) {
            Some(self.strategy.phi(run, mem))
        } else {
            self.strategy.consolidate(run, mem)
        };
        updated.filter(|m| m != mem)
    }

    pub fn task_system(&self, tasks: &[Task], memory: &S::Memory) -> Result<TaskSystem, NxpError> {
        let n = tasks.len() as u32;
        let omega = n + 1;
        let mut step = BTreeMap::new();
        let mut answers = Vec::with_capacity(tasks.len());
        let mut final_value = false;
        for (i, task) in tasks.iter().enumerate() {
            let (run, _) = self.perform(task, memory, i)?;
            if run.budget_exhausted || self.memory_after(task, &run, memory).is_some() {
                step.insert(i as u32, omega);
                answers.push(None);
            } else {
                step.insert(i as u32, i as u32 + 1);
                answers.push(Some(run.answer));
                final_value = run.answer;
            }
        }
        let system = TransitionSystem::new(
            (0..n).collect(),
            [n].into_iter().collect(),
            omega,
            [(n, final_value)].into_iter().collect(),
            step,
        )
        .expect("task systems are well formed");
        Ok(TaskSystem { system, answers })
    }

    /// Run a task list as a chain of unfoldings: unfold the system of the
    /// current memory until it reaches omega, update memory from the
    /// blocked task, and continue in the image system from the next task.
    /// Returns the answer of every task and each memory switch.
    pub fn run_by_morphisms(
        &self,
        tasks: &[Task],
        memory: S::Memory,
    ) -> Result<(Vec<bool>, Vec<Switch<S::Memory>>), NxpError> {
        let mut memory = memory;
        let mut answers = Vec::new();
        let mut switches = Vec::new();
        let mut position = 0;
        while position < tasks.len() {
            let rest = &tasks[position..];
            let sys = self.task_system(rest, &memory)?;
            let unfolding = sys.system.unfold(0, rest.len());
            let clean = unfolding
                .visited
                .iter()
                .take_while(|&&c| c != sys.system.omega())
                .count();
            answers.extend(
                sys.answers[..clean]
                    .iter()
                    .map(|a| a.expect("step defined")),
            );
            match unfolding.end {
                UnfoldEnd::Omega => {
                    let blocked = position + clean;
                    let task = &tasks[blocked];
                    let (run, _) = self.perform(task, &memory, blocked)?;
                    if run.budget_exhausted {
                        break;
                    }
                    answers.push(run.answer);
                    memory = self
                        .memory_after(task, &run, &memory)
                        .expect("omega steps change memory");
                    position = blocked + 1;
                    switches.push(Switch {
                        at: position,
                        memory: memory.clone(),
                    });
                }
                _ => break,
            }
        }
        Ok((answers, switches))
    }
}


/// The trace with a metrics event after the last event of each episode.
pub fn with_metrics(trace: &ExecutionTrace) -> ExecutionTrace {
    let mut metrics = episode_metrics(trace).into_iter().peekable();
    let mut out = Vec::with_capacity(trace.len());
    for (i, (episode, event)) in trace.iter().enumerate() {
        out.push((*episode, event.clone()));
        let closes = trace.get(i + 1).is_none_or(|(next, _)| next != episode);
        if closes {
            while let Some(m) = metrics.next_if(|m| m.episode <= *episode) {
                out.push((m.episode, TraceEvent::Metrics(m)));
            }
        }
    }
    out
}

/// One line of a scenario file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioLine {
    pub task: String,
    pub features: BTreeSet<String>,
    pub goal: Expr,
    #[serde(default)]
    pub env: Environment,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

/// Parse a JSON-lines scenario; blank lines are skipped.
pub fn parse_scenario(text: &str) -> Result<Vec<Task>, ScenarioError> {
    let mut tasks = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| ScenarioError {
            line: i + 1,
            message,
        };
        let line: ScenarioLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if line.features.is_empty() {
            return Err(err("a task needs at least one feature".into()));
        }
        tasks.push(Task {
            id: line.task,
            features: line.features,
            goal: line.goal,
            bindings: line.env,
            signal: UnexpectedSignal::Strategy,
        });
    }
    Ok(tasks)
}
