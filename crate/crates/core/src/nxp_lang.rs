//! The simple NXP goal language and its monadic evaluator.
//!
//! ```text
//! expr := disj
//! disj := conj ("or" conj)*
//! conj := post ("and" post)*
//! post := atom ["post" "(" expr ")"] | "(" expr ")"
//! ```
//!
//! Evaluation runs in the N-triple: a state computation over the goal
//! agenda. `b post E` appends `E` to the agenda, then yields the value of
//! `b`. Both operands of `and`/`or` are always evaluated.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::triples::{post, Agenda, GoalAgenda, State};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Expr {
    Atom(String),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    /// `b post (goal)`: the base is always an atom name.
    Posting(String, Box<Expr>),
}

impl Expr {
    pub fn atom(name: impl Into<String>) -> Expr {
        Expr::Atom(name.into())
    }

    pub fn and(l: Expr, r: Expr) -> Expr {
        Expr::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Expr, r: Expr) -> Expr {
        Expr::Or(Box::new(l), Box::new(r))
    }

    pub fn posting(base: impl Into<String>, goal: Expr) -> Expr {
        Expr::Posting(base.into(), Box::new(goal))
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Expr::Atom(a) => Some(a),
            _ => None,
        }
    }

    /// Depth of the syntax tree; an atom has depth 1. The goal under a
    /// `post` counts toward depth.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Atom(_) => 1,
            Expr::And(l, r) | Expr::Or(l, r) => 1 + l.depth().max(r.depth()),
            Expr::Posting(_, g) => 1 + g.depth(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Atom(_) => 1,
            Expr::And(l, r) | Expr::Or(l, r) => 1 + l.node_count() + r.node_count(),
            Expr::Posting(_, g) => 1 + g.node_count(),
        }
    }

    /// Rule applications needed to evaluate this expression once; posted
    /// goals are not evaluated here.
    pub fn skeleton_size(&self) -> usize {
        match self {
            Expr::Atom(_) | Expr::Posting(..) => 1,
            Expr::And(l, r) | Expr::Or(l, r) => 1 + l.skeleton_size() + r.skeleton_size(),
        }
    }

    /// Every atom name, including bases and atoms inside posted goals.
    pub fn atoms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Atom(a) => {
                out.insert(a.clone());
            }
            Expr::And(l, r) | Expr::Or(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
            Expr::Posting(b, g) => {
                out.insert(b.clone());
                g.collect_atoms(out);
            }
        }
    }

    pub fn is_post_free(&self) -> bool {
        match self {
            Expr::Atom(_) => true,
            Expr::And(l, r) | Expr::Or(l, r) => l.is_post_free() && r.is_post_free(),
            Expr::Posting(..) => false,
        }
    }

    /// Replace every `b post (g)` by `b`.
    pub fn erase_posts(&self) -> Expr {
        match self {
            Expr::Atom(_) => self.clone(),
            Expr::And(l, r) => Expr::and(l.erase_posts(), r.erase_posts()),
            Expr::Or(l, r) => Expr::or(l.erase_posts(), r.erase_posts()),
            Expr::Posting(b, _) => Expr::Atom(b.clone()),
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, level: u8) -> fmt::Result {
        match self {
            Expr::Atom(a) => f.write_str(a),
            Expr::Posting(b, g) => {
                write!(f, "{b} post (")?;
                g.fmt_prec(f, 0)?;
                f.write_str(")")
            }
            Expr::Or(l, r) => {
                if level > 0 {
                    f.write_str("(")?;
                }
                l.fmt_prec(f, 0)?;
                f.write_str(" or ")?;
                r.fmt_prec(f, 1)?;
                if level > 0 {
                    f.write_str(")")?;
                }
                Ok(())
            }
            Expr::And(l, r) => {
                if level > 1 {
                    f.write_str("(")?;
                }
                l.fmt_prec(f, 1)?;
                f.write_str(" and ")?;
                r.fmt_prec(f, 2)?;
                if level > 1 {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl From<Expr> for String {
    fn from(e: Expr) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Expr {
    type Error = ExprParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        parse_expr(&s)
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: {message}")]
pub struct ExprParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Ident(String),
    And,
    Or,
    Post,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, ExprParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'(' {
            out.push((i, Token::LParen));
            i += 1;
        } else if c == b')' {
            out.push((i, Token::RParen));
            i += 1;
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &text[start..i];
            let tok = match word {
                "and" => Token::And,
                "or" => Token::Or,
                "post" => Token::Post,
                _ => Token::Ident(word.to_string()),
            };
            out.push((start, tok));
        } else {
            return Err(ExprParseError {
                offset: i,
                message: format!(
                    "unexpected character '{}'",
                    text[i..].chars().next().unwrap_or('?')
                ),
            });
        }
    }
    Ok(out)
}

struct ExprParser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl ExprParser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error(&self, message: impl Into<String>) -> ExprParseError {
        ExprParseError {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Token, what: &str) -> Result<(), ExprParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn disj(&mut self) -> Result<Expr, ExprParseError> {
        let mut left = self.conj()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            let right = self.conj()?;
            left = Expr::or(left, right);
        }
        Ok(left)
    }

    fn conj(&mut self) -> Result<Expr, ExprParseError> {
        let mut left = self.primary()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            let right = self.primary()?;
            left = Expr::and(left, right);
        }
        Ok(left)
    }

    fn primary(&mut self) -> Result<Expr, ExprParseError> {
        match self.peek().cloned() {
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.disj()?;
                self.expect(Token::RParen, "')'")?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Token::Post) {
                    self.pos += 1;
                    self.expect(Token::LParen, "'(' after post")?;
                    let goal = self.disj()?;
                    self.expect(Token::RParen, "')'")?;
                    Ok(Expr::posting(name, goal))
                } else {
                    Ok(Expr::Atom(name))
                }
            }
            Some(_) => Err(self.error("expected atom or '('")),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

pub fn parse_expr(text: &str) -> Result<Expr, ExprParseError> {
    let mut p = ExprParser {
        tokens: tokenize(text)?,
        pos: 0,
        end: text.len(),
    };
    let e = p.disj()?;
    if p.pos != p.tokens.len() {
        return Err(p.error("trailing input"));
    }
    Ok(e)
}

/// Truth assignment for atoms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Environment(pub BTreeMap<String, bool>);

impl Environment {
    pub fn new() -> Self {
        Environment(BTreeMap::new())
    }

    pub fn get(&self, atom: &str) -> Option<bool> {
        self.0.get(atom).copied()
    }

    pub fn set(&mut self, atom: impl Into<String>, value: bool) {
        self.0.insert(atom.into(), value);
    }

    pub fn with(mut self, atom: impl Into<String>, value: bool) -> Self {
        self.set(atom, value);
        self
    }

    /// Add a binding only if the atom is not bound yet.
    pub fn bind_default(&mut self, atom: impl Into<String>, value: bool) {
        self.0.entry(atom.into()).or_insert(value);
    }

    /// First atom of `e` that has no binding.
    pub fn check(&self, e: &Expr) -> Result<(), NxpError> {
        match e.atoms().into_iter().find(|a| !self.0.contains_key(a)) {
            Some(name) => Err(NxpError::UnboundAtom(name)),
            None => Ok(()),
        }
    }
}

impl<S: Into<String>> FromIterator<(S, bool)> for Environment {
    fn from_iter<I: IntoIterator<Item = (S, bool)>>(iter: I) -> Self {
        Environment(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NxpError {
    #[error("unbound atom '{0}'")]
    UnboundAtom(String),
}

/// Observable events of one evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EvalEvent {
    /// An episode-level goal starts evaluating.
    Goal {
        goal: Expr,
    },
    Atom {
        name: String,
        value: bool,
    },
    Connective {
        op: Connective,
    },
    /// `base post (goal)`: the base atom's value and the posted goal.
    Post {
        base: String,
        value: bool,
        goal: Expr,
    },
    /// A dequeued goal was already evaluated in this episode.
    Duplicate {
        goal: Expr,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connective {
    And,
    Or,
}

/// Memories the evaluator can run in: an agenda plus an optional event sink.
pub trait EvalMemory: Agenda {
    fn note(&mut self, _event: EvalEvent) {}
}

impl EvalMemory for GoalAgenda {}

/// Agenda that also counts rule applications and records events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TracedAgenda {
    pub agenda: GoalAgenda,
    pub steps: u64,
    pub events: Vec<EvalEvent>,
}

impl Agenda for TracedAgenda {
    fn push_goal(&mut self, goal: Expr) {
        self.agenda.push_goal(goal);
    }
}

impl EvalMemory for TracedAgenda {
    fn note(&mut self, event: EvalEvent) {
        if !matches!(event, EvalEvent::Goal { .. } | EvalEvent::Duplicate { .. }) {
            self.steps += 1;
        }
        self.events.push(event);
    }
}

fn note<M: EvalMemory + 'static>(event: EvalEvent) -> State<(), M> {
    State::new(move |mut s: M| {
        s.note(event.clone());
        ((), s)
    })
}

/// Build the N-triple computation for `e`:
///
/// ```text
/// eval(b)          = unit b
/// eval(E1 or E2)   = eval E1 * \x. eval E2 * \y. unit (x | y)
/// eval(E1 and E2)  = eval E1 * \x. eval E2 * \y. unit (x & y)
/// eval(b post E)   = post E * unit b
/// ```
///
/// Every atom must be bound; the check happens before anything runs.
pub fn eval<M: EvalMemory + 'static>(
    e: &Expr,
    env: &Environment,
) -> Result<State<bool, M>, NxpError> {
    env.check(e)?;
    Ok(build(e, &Rc::new(env.clone())))
}

fn build<M: EvalMemory + 'static>(e: &Expr, env: &Rc<Environment>) -> State<bool, M> {
    match e {
        Expr::Atom(name) => {
            let value = env.get(name).unwrap_or(false);
            note(EvalEvent::Atom {
                name: name.clone(),
                value,
            })
            .bind(move |_| State::unit(value))
        }
        Expr::Or(l, r) | Expr::And(l, r) => {
            let op = if matches!(e, Expr::Or(..)) {
                Connective::Or
            } else {
                Connective::And
            };
            let left = build::<M>(l, env);
            let right = build::<M>(r, env);
            note(EvalEvent::Connective { op }).bind(move |_| {
                let right = right.clone();
                left.clone().bind(move |x| {
                    right.clone().bind(move |y| {
                        State::unit(match op {
                            Connective::Or => x | y,
                            Connective::And => x & y,
                        })
                    })
                })
            })
        }
        Expr::Posting(base, goal) => {
            let value = env.get(base).unwrap_or(false);
            let goal = (**goal).clone();
            note(EvalEvent::Post {
                base: base.clone(),
                value,
                goal: goal.clone(),
            })
            .bind(move |_| post(goal.clone()))
            .bind(move |_| State::unit(value))
        }
    }
}

/// Value, final agenda and rule-application count of one evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub value: bool,
    pub agenda: GoalAgenda,
    pub steps: u64,
}

/// Evaluate `e` once on `agenda` and observe the result.
pub fn eval_on(e: &Expr, env: &Environment, agenda: GoalAgenda) -> Result<EvalOutcome, NxpError> {
    let comp = eval::<TracedAgenda>(e, env)?;
    let (value, mem) = comp.run(TracedAgenda {
        agenda,
        ..TracedAgenda::default()
    });
    Ok(EvalOutcome {
        value,
        agenda: mem.agenda,
        steps: mem.steps,
    })
}

pub const DEFAULT_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrainedGoal {
    pub goal: Expr,
    pub value: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub main_value: bool,
    /// Goals taken from the agenda and evaluated, in order.
    pub drained: Vec<DrainedGoal>,
    pub steps: u64,
    /// Number of evaluations run, the main goal included.
    pub evaluations: usize,
    pub budget_exhausted: bool,
    /// Goals left on the agenda when the budget ran out.
    pub remaining: Vec<Expr>,
}

/// Evaluate `main`, then drain the agenda oldest-first.
pub fn run_episode(
    main: &Expr,
    env: &Environment,
    budget: usize,
) -> Result<EpisodeResult, NxpError> {
    run_episode_traced(main, env, &[], budget).map(|(r, _)| r)
}

/// As [`run_episode`], with `initial` goals already on the agenda ahead of
/// anything `main` posts. Returns the event log as well.
///
/// A dequeued goal structurally equal to one already evaluated in this
/// episode (the main goal included) is skipped.
pub fn run_episode_traced(
    main: &Expr,
    env: &Environment,
    initial: &[Expr],
    budget: usize,
) -> Result<(EpisodeResult, Vec<EvalEvent>), NxpError> {
    env.check(main)?;
    for goal in initial {
        env.check(goal)?;
    }
    let shared = Rc::new(env.clone());
    let mut seen: HashSet<Expr> = HashSet::new();
    let mut mem = TracedAgenda {
        agenda: GoalAgenda(initial.to_vec()),
        ..TracedAgenda::default()
    };

    mem.note(EvalEvent::Goal { goal: main.clone() });
    let (main_value, after) = build::<TracedAgenda>(main, &shared).run(mem);
    mem = after;
    seen.insert(main.clone());
    let mut evaluations = 1;
    let mut drained = Vec::new();
    let mut budget_exhausted = false;

    loop {
        let Some(goal) = mem.agenda.0.first().cloned() else {
            break;
        };
        if seen.contains(&goal) {
            mem.agenda.0.remove(0);
            mem.note(EvalEvent::Duplicate { goal });
            continue;
        }
        if evaluations >= budget {
            budget_exhausted = true;
            break;
        }
        mem.agenda.0.remove(0);
        mem.note(EvalEvent::Goal { goal: goal.clone() });
        let (value, after) = build::<TracedAgenda>(&goal, &shared).run(mem);
        mem = after;
        evaluations += 1;
        seen.insert(goal.clone());
        drained.push(DrainedGoal { goal, value });
    }

    let result = EpisodeResult {
        main_value,
        drained,
        steps: mem.steps,
        evaluations,
        budget_exhausted,
        remaining: mem.agenda.0,
    };
    Ok((result, mem.events))
}

/// Random expression over `atoms` with the given maximum depth. Posting
/// nodes appear with probability `post_prob` at each internal position.
pub fn random_expr<R: Rng + ?Sized>(
    rng: &mut R,
    max_depth: usize,
    atoms: &[&str],
    post_prob: f64,
) -> Expr {
    let leaf = |rng: &mut R| Expr::atom(atoms[rng.gen_range(0..atoms.len())]);
    if max_depth <= 1 || rng.gen_bool(0.25) {
        return leaf(rng);
    }
    if rng.gen_bool(post_prob) {
        let base = atoms[rng.gen_range(0..atoms.len())];
        return Expr::posting(base, random_expr(rng, max_depth - 1, atoms, post_prob));
    }
    let l = random_expr(rng, max_depth - 1, atoms, post_prob);
    let r = random_expr(rng, max_depth - 1, atoms, post_prob);
    if rng.gen_bool(0.5) {
        Expr::and(l, r)
    } else {
        Expr::or(l, r)
    }
}

/// Every post-free expression over `atoms` with depth at most `max_depth`.
pub fn enumerate_post_free(atoms: &[&str], max_depth: usize) -> Vec<Expr> {
    let mut by_depth: Vec<Vec<Expr>> = vec![Vec::new()];
    by_depth.push(atoms.iter().map(|a| Expr::atom(*a)).collect());
    for d in 2..=max_depth {
        let shallower: Vec<Expr> = by_depth[1..d].iter().flatten().cloned().collect();
        let mut level = Vec::new();
        for l in &shallower {
            for r in &shallower {
                if l.depth() == d - 1 || r.depth() == d - 1 {
                    level.push(Expr::and(l.clone(), r.clone()));
                    level.push(Expr::or(l.clone(), r.clone()));
                }
            }
        }
        by_depth.push(level);
    }
    by_depth.into_iter().flatten().collect()
}
