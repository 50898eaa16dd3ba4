//! Stack machine for NXP episodes with a second stack for acquired skill.
//!
//! The solve stack only ever sees push (decomposition), pop (resolution)
//! and add-at-bottom (evoked goals). The skill stack is rewritten by a
//! pluggable learn function, either after every pop or once at the end of
//! the episode. [`Machine`] is generic over where the two stacks live:
//! [`DualStore`] keeps them apart, [`SingleStore`] keeps both in one stack
//! separated by a marker. [`reduce_to_single`] moves a running machine
//! from the first to the second.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::nxp_lang::{Connective, DrainedGoal, Environment, Expr, NxpError, DEFAULT_BUDGET};
use crate::trace::TraceEvent;

/// Positions in the machine's read and post logs when a compound goal
/// started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogMark {
    pub reads: usize,
    pub posts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StackItem {
    Goal(Expr),
    /// A posted or injected goal waiting at the bottom.
    Evoked(Expr),
    /// Evaluate `right` once the left operand's value is in the register.
    Right {
        op: Connective,
        right: Expr,
        goal: Expr,
        mark: LogMark,
    },
    /// Combine `left` with the register, resolving `goal`.
    Combine {
        op: Connective,
        left: bool,
        goal: Expr,
        mark: LogMark,
    },
    /// The register now holds the value of a top-level goal.
    Record {
        goal: Expr,
        main: bool,
    },
}

fn op_name(op: Connective) -> &'static str {
    match op {
        Connective::And => "and",
        Connective::Or => "or",
    }
}

fn apply(op: Connective, x: bool, y: bool) -> bool {
    match op {
        Connective::And => x & y,
        Connective::Or => x | y,
    }
}

impl fmt::Display for StackItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StackItem::Goal(e) => write!(f, "goal({e})"),
            StackItem::Evoked(e) => write!(f, "evoked({e})"),
            StackItem::Right { op, right, .. } => write!(f, "{}-right({right})", op_name(*op)),
            StackItem::Combine { op, left, .. } => write!(f, "{}-combine({left})", op_name(*op)),
            StackItem::Record { goal, main } => {
                write!(f, "{}({goal})", if *main { "main" } else { "record" })
            }
        }
    }
}

/// Contents of the skill stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkillItem {
    /// A goal to inject at the start of later episodes.
    Expect { goal: Expr },
    /// A cached resolution: when every atom in `condition` has the stored
    /// value, `goal` evaluates to `value` and posts `posts`.
    Chunk {
        goal: Expr,
        condition: BTreeMap<String, bool>,
        value: bool,
        posts: Vec<Expr>,
    },
}

impl fmt::Display for SkillItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkillItem::Expect { goal } => write!(f, "expect({goal})"),
            SkillItem::Chunk { goal, value, .. } => write!(f, "chunk({goal} => {value})"),
        }
    }
}

impl SkillItem {
    fn matches(
        &self,
        goal: &Expr,
        env: &Environment,
    ) -> Option<(&BTreeMap<String, bool>, bool, &[Expr])> {
        match self {
            SkillItem::Chunk {
                goal: g,
                condition,
                value,
                posts,
            } if g == goal && condition.iter().all(|(a, v)| env.get(a) == Some(*v)) => {
                Some((condition, *value, posts))
            }
            _ => None,
        }
    }
}

/// A compound goal resolved by evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub goal: Expr,
    pub value: bool,
    /// Atoms read while resolving, with their values.
    pub condition: BTreeMap<String, bool>,
    pub posts: Vec<Expr>,
}

/// What a learn function sees.
pub struct LearnView<'a> {
    /// Solve stack, top first.
    pub solve: Vec<&'a StackItem>,
    /// Skill stack, top first.
    pub skill: Vec<&'a SkillItem>,
    /// Compound goals resolved since the previous call.
    pub resolved: &'a [Resolution],
    /// Top-level goals finished since the previous call.
    pub recorded: &'a [DrainedGoal],
}

pub type CustomLearn = Rc<dyn Fn(&LearnView) -> Vec<SkillItem>>;

/// The learn function; returns the new skill stack, bottom first.
#[derive(Clone)]
pub enum Learn {
    Identity,
    Empty,
    /// Cache every resolved compound goal.
    Chunk,
    /// Remember every finished top-level goal as an expectation.
    Expect,
    Custom(CustomLearn),
}

impl fmt::Debug for Learn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Learn::Identity => "Identity",
            Learn::Empty => "Empty",
            Learn::Chunk => "Chunk",
            Learn::Expect => "Expect",
            Learn::Custom(_) => "Custom",
        })
    }
}

impl std::str::FromStr for Learn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Learn::Identity),
            "empty" => Ok(Learn::Empty),
            "chunk" => Ok(Learn::Chunk),
            "expect" => Ok(Learn::Expect),
            _ => Err(format!(
                "unknown learn function '{s}' (identity, empty, chunk, expect)"
            )),
        }
    }
}

impl Learn {
    pub fn apply(&self, view: &LearnView) -> Vec<SkillItem> {
        let mut skill: Vec<SkillItem> = view.skill.iter().rev().map(|s| (*s).clone()).collect();
        match self {
            Learn::Identity => skill,
            Learn::Empty => Vec::new(),
            Learn::Chunk => {
                for r in view.resolved {
                    let chunk = SkillItem::Chunk {
                        goal: r.goal.clone(),
                        condition: r.condition.clone(),
                        value: r.value,
                        posts: r.posts.clone(),
                    };
                    if !skill.contains(&chunk) {
                        skill.push(chunk);
                    }
                }
                skill
            }
            Learn::Expect => {
                for d in view.recorded {
                    let item = SkillItem::Expect {
                        goal: d.goal.clone(),
                    };
                    if !skill.contains(&item) {
                        skill.push(item);
                    }
                }
                skill
            }
            Learn::Custom(f) => f(view),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PerStep,
    #[default]
    PerEpisode,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-step" => Ok(Mode::PerStep),
            "per-episode" => Ok(Mode::PerEpisode),
            _ => Err(format!("unknown mode '{s}' (per-step, per-episode)")),
        }
    }
}

/// Storage for the solve and skill stacks.
pub trait StackStore: Clone {
    fn push(&mut self, item: StackItem);
    /// Pop from the solve stack; `None` when it is empty.
    fn pop(&mut self) -> Option<StackItem>;
    fn peek(&self) -> Option<&StackItem>;
    /// Insert at the bottom of the solve stack.
    fn add_bottom(&mut self, item: StackItem);
    /// Solve stack, top first.
    fn solve(&self) -> Vec<&StackItem>;
    /// Skill stack, top first.
    fn skill(&self) -> Vec<&SkillItem>;
    /// Replace the skill stack (given bottom first).
    fn set_skill(&mut self, skill: Vec<SkillItem>);
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DualStore {
    /// Bottom first.
    pub solve: Vec<StackItem>,
    /// Bottom first.
    pub skill: Vec<SkillItem>,
}

impl StackStore for DualStore {
    fn push(&mut self, item: StackItem) {
        self.solve.push(item);
    }

    fn pop(&mut self) -> Option<StackItem> {
        self.solve.pop()
    }

    fn peek(&self) -> Option<&StackItem> {
        self.solve.last()
    }

    fn add_bottom(&mut self, item: StackItem) {
        self.solve.insert(0, item);
    }

    fn solve(&self) -> Vec<&StackItem> {
        self.solve.iter().rev().collect()
    }

    fn skill(&self) -> Vec<&SkillItem> {
        self.skill.iter().rev().collect()
    }

    fn set_skill(&mut self, skill: Vec<SkillItem>) {
        self.skill = skill;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Solve(StackItem),
    Marker,
    Skill(SkillItem),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Solve(s) => s.fmt(f),
            Cell::Marker => f.write_str("MARKER"),
            Cell::Skill(s) => s.fmt(f),
        }
    }
}

/// One stack: skill items, then the marker, then solve items on top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleStore {
    /// Bottom first.
    cells: Vec<Cell>,
}

impl Default for SingleStore {
    fn default() -> Self {
        SingleStore {
            cells: vec![Cell::Marker],
        }
    }
}

impl SingleStore {
    /// An empty stack with no marker.
    pub fn bare() -> Self {
        SingleStore { cells: Vec::new() }
    }

    fn marker(&self) -> usize {
        self.cells
            .iter()
            .position(|c| *c == Cell::Marker)
            .expect("single store always holds its marker")
    }

    /// Put a whole stack (bottom first) on top of this one.
    pub fn merge_top(&mut self, cells: Vec<Cell>) {
        self.cells.extend(cells);
    }

    /// Put a whole stack (bottom first) under this one.
    pub fn merge_bottom(&mut self, mut cells: Vec<Cell>) {
        cells.append(&mut self.cells);
        self.cells = cells;
    }

    pub fn top_to_bottom(&self) -> Vec<&Cell> {
        self.cells.iter().rev().collect()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

impl StackStore for SingleStore {
    fn push(&mut self, item: StackItem) {
        self.cells.push(Cell::Solve(item));
    }

    fn pop(&mut self) -> Option<StackItem> {
        match self.cells.last() {
            Some(Cell::Solve(_)) => match self.cells.pop() {
                Some(Cell::Solve(item)) => Some(item),
                _ => unreachable!(),
            },
            _ => None,
        }
    }

    fn peek(&self) -> Option<&StackItem> {
        match self.cells.last() {
            Some(Cell::Solve(item)) => Some(item),
            _ => None,
        }
    }

    fn add_bottom(&mut self, item: StackItem) {
        let at = self.marker() + 1;
        self.cells.insert(at, Cell::Solve(item));
    }

    fn solve(&self) -> Vec<&StackItem> {
        self.cells
            .iter()
            .rev()
            .map_while(|c| match c {
                Cell::Solve(s) => Some(s),
                _ => None,
            })
            .collect()
    }

    fn skill(&self) -> Vec<&SkillItem> {
        self.cells[..self.marker()]
            .iter()
            .rev()
            .filter_map(|c| match c {
                Cell::Skill(s) => Some(s),
                _ => None,
            })
            .collect()
    }

    fn set_skill(&mut self, skill: Vec<SkillItem>) {
        let m = self.marker();
        let mut cells: Vec<Cell> = skill.into_iter().map(Cell::Skill).collect();
        cells.extend(self.cells.drain(m..));
        self.cells = cells;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmResult {
    pub value: bool,
    pub drained: Vec<DrainedGoal>,
    /// Bottom first.
    pub skill_stack: Vec<SkillItem>,
    pub step_count: u64,
    pub impasses: u64,
    pub cache_hits: u64,
    pub budget_exhausted: bool,
    pub remaining: Vec<Expr>,
    pub events: Vec<TraceEvent>,
}

/// A machine running one episode.
#[derive(Clone)]
pub struct Machine<S: StackStore> {
    store: S,
    env: Environment,
    mode: Mode,
    learn: Learn,
    budget: usize,
    register: bool,
    seen: HashSet<Expr>,
    evaluations: usize,
    reads: Vec<(String, bool)>,
    posts: Vec<Expr>,
    resolved: Vec<Resolution>,
    recorded: Vec<DrainedGoal>,
    main_value: Option<bool>,
    drained: Vec<DrainedGoal>,
    step_count: u64,
    impasses: u64,
    cache_hits: u64,
    budget_exhausted: bool,
    finished: bool,
    events: Vec<TraceEvent>,
}

#[derive(Debug, Clone)]
pub struct VmConfig {
    pub learn: Learn,
    pub mode: Mode,
    pub budget: usize,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            learn: Learn::Identity,
            mode: Mode::PerEpisode,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl<S: StackStore> Machine<S> {
    /// Load an episode: `initial` goals wait at the bottom, `main` is on top.
    pub fn start(
        mut store: S,
        main: &Expr,
        env: &Environment,
        initial: &[Expr],
        config: &VmConfig,
    ) -> Result<Self, NxpError> {
        env.check(main)?;
        for g in initial {
            env.check(g)?;
        }
        let mut events = Vec::new();
        for g in initial {
            let item = StackItem::Evoked(g.clone());
            events.push(TraceEvent::AddBottom {
                item: item.to_string(),
            });
            store.add_bottom(item);
        }
        for item in [
            StackItem::Record {
                goal: main.clone(),
                main: true,
            },
            StackItem::Goal(main.clone()),
        ] {
            events.push(TraceEvent::Push {
                item: item.to_string(),
            });
            store.push(item);
        }
        Ok(Machine {
            store,
            env: env.clone(),
            mode: config.mode,
            learn: config.learn.clone(),
            budget: config.budget,
            register: false,
            seen: [main.clone()].into_iter().collect(),
            evaluations: 1,
            reads: Vec::new(),
            posts: Vec::new(),
            resolved: Vec::new(),
            recorded: Vec::new(),
            main_value: None,
            drained: Vec::new(),
            step_count: 0,
            impasses: 0,
            cache_hits: 0,
            budget_exhausted: false,
            finished: false,
            events,
        })
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn push(&mut self, item: StackItem) {
        self.events.push(TraceEvent::Push {
            item: item.to_string(),
        });
        self.store.push(item);
    }

    fn add_bottom(&mut self, item: StackItem) {
        self.events.push(TraceEvent::AddBottom {
            item: item.to_string(),
        });
        self.store.add_bottom(item);
    }

    fn read(&mut self, atom: &str) -> bool {
        let v = self.env.get(atom).unwrap_or(false);
        self.reads.push((atom.to_string(), v));
        v
    }

    fn evoke(&mut self, goal: Expr) {
        self.posts.push(goal.clone());
        self.add_bottom(StackItem::Evoked(goal));
    }

    fn chunk_for(&self, goal: &Expr) -> Option<(Vec<(String, bool)>, bool, Vec<Expr>)> {
        self.store.skill().into_iter().find_map(|s| {
            s.matches(goal, &self.env).map(|(cond, v, posts)| {
                (
                    cond.iter().map(|(a, b)| (a.clone(), *b)).collect(),
                    v,
                    posts.to_vec(),
                )
            })
        })
    }

    /// Start evaluating `e`; its value ends up in the register.
    fn begin(&mut self, e: Expr) {
        match e {
            Expr::Atom(a) => self.register = self.read(&a),
            Expr::Posting(base, goal) => {
                self.evoke(*goal);
                self.register = self.read(&base);
            }
            Expr::And(..) | Expr::Or(..) => {
                if let Some((condition, value, posts)) = self.chunk_for(&e) {
                    self.cache_hits += 1;
                    self.reads.extend(condition);
                    for p in posts {
                        self.evoke(p);
                    }
                    self.register = value;
                    return;
                }
                self.impasses += 1;
                let mark = LogMark {
                    reads: self.reads.len(),
                    posts: self.posts.len(),
                };
                let (op, l, r) = match &e {
                    Expr::And(l, r) => (Connective::And, l, r),
                    Expr::Or(l, r) => (Connective::Or, l, r),
                    _ => unreachable!(),
                };
                let (l, r) = ((**l).clone(), (**r).clone());
                self.push(StackItem::Right {
                    op,
                    right: r,
                    goal: e,
                    mark,
                });
                self.push(StackItem::Goal(l));
            }
        }
    }

    fn invoke_learn(&mut self) {
        let skill = {
            let view = LearnView {
                solve: self.store.solve(),
                skill: self.store.skill(),
                resolved: &self.resolved,
                recorded: &self.recorded,
            };
            self.learn.apply(&view)
        };
        self.resolved.clear();
        self.recorded.clear();
        self.events.push(TraceEvent::Learn {
            skill_size: skill.len(),
        });
        self.store.set_skill(skill);
    }

    fn finish(&mut self) {
        if self.mode == Mode::PerEpisode {
            self.invoke_learn();
        }
        self.finished = true;
    }

    /// One pop and its consequences. Returns false once the episode is over.
    pub fn step(&mut self) -> bool {
        if self.finished {
            return false;
        }
        match self.store.peek() {
            None => {
                self.finish();
                return false;
            }
            Some(StackItem::Evoked(g))
                if !self.seen.contains(g) && self.evaluations >= self.budget =>
            {
                self.budget_exhausted = true;
                self.finish();
                return false;
            }
            _ => {}
        }
        let item = self.store.pop().expect("peeked");
        self.step_count += 1;
        self.events.push(TraceEvent::Pop {
            item: item.to_string(),
        });
        match item {
            StackItem::Goal(e) => self.begin(e),
            StackItem::Evoked(g) => {
                if !self.seen.contains(&g) {
                    self.evaluations += 1;
                    self.seen.insert(g.clone());
                    self.push(StackItem::Record {
                        goal: g.clone(),
                        main: false,
                    });
                    self.begin(g);
                }
            }
            StackItem::Right {
                op,
                right,
                goal,
                mark,
            } => {
                self.push(StackItem::Combine {
                    op,
                    left: self.register,
                    goal,
                    mark,
                });
                self.push(StackItem::Goal(right));
            }
            StackItem::Combine {
                op,
                left,
                goal,
                mark,
            } => {
                self.register = apply(op, left, self.register);
                self.resolved.push(Resolution {
                    goal,
                    value: self.register,
                    condition: self.reads[mark.reads..].iter().cloned().collect(),
                    posts: self.posts[mark.posts..].to_vec(),
                });
            }
            StackItem::Record { goal, main } => {
                let d = DrainedGoal {
                    goal,
                    value: self.register,
                };
                if main {
                    self.main_value = Some(self.register);
                } else {
                    self.drained.push(d.clone());
                }
                self.recorded.push(d);
            }
        }
        if self.mode == Mode::PerStep {
            self.invoke_learn();
        }
        true
    }

    pub fn run(mut self) -> VmResult {
        while self.step() {}
        self.into_result()
    }

    fn into_result(self) -> VmResult {
        let skill_stack = self.store.skill().into_iter().rev().cloned().collect();
        let remaining = self
            .store
            .solve()
            .into_iter()
            .filter_map(|i| match i {
                StackItem::Evoked(g) => Some(g.clone()),
                _ => None,
            })
            .collect();
        VmResult {
            value: self.main_value.unwrap_or(self.register),
            drained: self.drained,
            skill_stack,
            step_count: self.step_count,
            impasses: self.impasses,
            cache_hits: self.cache_hits,
            budget_exhausted: self.budget_exhausted,
            remaining,
            events: self.events,
        }
    }

    fn convert<T: StackStore>(self, store: T) -> Machine<T> {
        Machine {
            store,
            env: self.env,
            mode: self.mode,
            learn: self.learn,
            budget: self.budget,
            register: self.register,
            seen: self.seen,
            evaluations: self.evaluations,
            reads: self.reads,
            posts: self.posts,
            resolved: self.resolved,
            recorded: self.recorded,
            main_value: self.main_value,
            drained: self.drained,
            step_count: self.step_count,
            impasses: self.impasses,
            cache_hits: self.cache_hits,
            budget_exhausted: self.budget_exhausted,
            finished: self.finished,
            events: self.events,
        }
    }
}

pub type DualStackMachine = Machine<DualStore>;
pub type SingleStackMachine = Machine<SingleStore>;

/// Merge the solve stack on top of the skill stack with a marker between.
pub fn reduce_to_single(dual: DualStackMachine) -> SingleStackMachine {
    let solve = dual.store.solve.clone();
    let skill = dual.store.skill.clone();
    let (n_solve, n_skill) = (solve.len(), skill.len());
    let mut store = SingleStore::bare();
    store.merge_bottom(skill.into_iter().map(Cell::Skill).collect());
    store.merge_top(vec![Cell::Marker]);
    store.merge_top(solve.into_iter().map(Cell::Solve).collect());
    let mut single = dual.convert(store);
    single.events.push(TraceEvent::Merge {
        solve: n_solve,
        skill: n_skill,
    });
    single
}

/// Run one episode on a dual-stack machine with an empty skill stack.
pub fn vm_run(main: &Expr, env: &Environment, config: &VmConfig) -> Result<VmResult, NxpError> {
    Ok(Machine::start(DualStore::default(), main, env, &[], config)?.run())
}

/// Episodes sharing one skill stack. Expectation items are injected at the
/// bottom of the solve stack before each episode's main goal runs.
#[derive(Debug, Clone)]
pub struct VmSession {
    pub config: VmConfig,
    /// Bottom first.
    pub skill: Vec<SkillItem>,
}

impl VmSession {
    pub fn new(config: VmConfig) -> Self {
        VmSession {
            config,
            skill: Vec::new(),
        }
    }

    pub fn expectations(&self) -> Vec<Expr> {
        self.skill
            .iter()
            .filter_map(|s| match s {
                SkillItem::Expect { goal } => Some(goal.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn run(&mut self, main: &Expr, env: &Environment) -> Result<VmResult, NxpError> {
        let store = DualStore {
            solve: Vec::new(),
            skill: self.skill.clone(),
        };
        let initial = self.expectations();
        let result = Machine::start(store, main, env, &initial, &self.config)?.run();
        self.skill = result.skill_stack.clone();
        Ok(result)
    }
}
