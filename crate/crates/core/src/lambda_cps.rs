//! Untyped lambda calculus with call-by-value evaluation and the
//! Fischer continuation-passing transform.
//!
//! Concrete syntax:
//!
//! ```text
//! term := ident | "\" ident "." term | "(" term term ")" | "(" term ")"
//! ```
//!
//! Applications are always parenthesized, so the grammar needs no
//! lookahead. A single parenthesized term is a group; the printer uses
//! groups only around an abstraction in function position.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

/// Untyped lambda terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    Abs(String, Rc<Term>),
    App(Rc<Term>, Rc<Term>),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn abs(param: impl Into<String>, body: Term) -> Term {
        Term::Abs(param.into(), Rc::new(body))
    }

    pub fn app(fun: Term, arg: Term) -> Term {
        Term::App(Rc::new(fun), Rc::new(arg))
    }

    /// Variables and abstractions are values; applications are not.
    pub fn is_value(&self) -> bool {
        !matches!(self, Term::App(..))
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        match self {
            Term::Var(_) => 1,
            Term::Abs(_, b) => 1 + b.size(),
            Term::App(f, a) => 1 + f.size() + a.size(),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free<'a>(&'a self, bound: &mut Vec<&'a str>, out: &mut BTreeSet<String>) {
        match self {
            Term::Var(x) => {
                if !bound.contains(&x.as_str()) {
                    out.insert(x.clone());
                }
            }
            Term::Abs(x, b) => {
                bound.push(x);
                b.collect_free(bound, out);
                bound.pop();
            }
            Term::App(f, a) => {
                f.collect_free(bound, out);
                a.collect_free(bound, out);
            }
        }
    }

    /// Every identifier occurring in the term, bound or free.
    pub fn all_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Var(x) => {
                out.insert(x.clone());
            }
            Term::Abs(x, b) => {
                out.insert(x.clone());
                b.collect_names(out);
            }
            Term::App(f, a) => {
                f.collect_names(out);
                a.collect_names(out);
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(x) => write!(f, "{x}"),
            Term::Abs(x, b) => write!(f, "\\{x}.{b}"),
            Term::App(m, n) if matches!(**m, Term::Abs(..)) => write!(f, "(({m}) {n})"),
            Term::App(m, n) => write!(f, "({m} {n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_' || c == b'\''
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'\''
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn expect(&mut self, byte: u8) -> Result<(), ParseError> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", byte as char)))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.src.get(self.pos) {
            Some(&c) if is_ident_start(c) => self.pos += 1,
            Some(_) => return Err(self.error("expected identifier")),
            None => return Err(self.error("unexpected end of input, expected identifier")),
        }
        while self.pos < self.src.len() && is_ident_char(self.src[self.pos]) {
            self.pos += 1;
        }
        // Only ASCII bytes were consumed.
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        self.skip_ws();
        match self.src.get(self.pos) {
            None => Err(self.error("unexpected end of input, expected term")),
            Some(b'\\') => {
                self.pos += 1;
                let param = self.ident()?;
                self.expect(b'.')?;
                let body = self.term()?;
                Ok(Term::abs(param, body))
            }
            Some(b'(') => {
                self.pos += 1;
                let fun = self.term()?;
                self.skip_ws();
                if self.src.get(self.pos) == Some(&b')') {
                    self.pos += 1;
                    return Ok(fun);
                }
                let arg = self.term()?;
                self.expect(b')')?;
                Ok(Term::app(fun, arg))
            }
            Some(_) => Ok(Term::Var(self.ident()?)),
        }
    }
}

/// Parse one term. Trailing non-whitespace input is an error.
pub fn parse_term(text: &str) -> Result<Term, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let term = p.term()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input after term"));
    }
    Ok(term)
}

/// Supplies continuation-variable names for the CPS transform.
///
/// Names are `_<stem><counter>` with one counter shared by all stems, and a
/// candidate is skipped if it occurs anywhere in the avoided set.
#[derive(Debug, Clone)]
pub struct FreshNameSource {
    counter: usize,
    prefix: String,
    avoid: BTreeSet<String>,
}

impl FreshNameSource {
    pub fn new(prefix: impl Into<String>) -> Self {
        FreshNameSource {
            counter: 0,
            prefix: prefix.into(),
            avoid: BTreeSet::new(),
        }
    }

    /// A source whose names never collide with any name in `term`.
    pub fn avoiding(term: &Term) -> Self {
        let mut source = FreshNameSource::new("_");
        source.avoid = term.all_names();
        source
    }

    pub fn fresh(&mut self, stem: &str) -> String {
        loop {
            let name = format!("{}{}{}", self.prefix, stem, self.counter);
            self.counter += 1;
            if !self.avoid.contains(&name) {
                return name;
            }
        }
    }

    pub fn emitted(&self) -> usize {
        self.counter
    }
}

/// Fischer CPS transform. The image is returned unreduced.
///
/// ```text
/// [[V]]    = \k.(k psi(V))
/// [[M N]]  = \k.([[M]] \m.([[N]] \n.((m k) n)))
/// psi(x)   = x
/// psi(\x.M) = \k.\x.([[M]] k)
/// ```
pub fn cps_transform(m: &Term, fresh: &mut FreshNameSource) -> Term {
    match m {
        Term::App(fun, arg) => {
            let k = fresh.fresh("k");
            let mv = fresh.fresh("m");
            let nv = fresh.fresh("n");
            let fun_cps = cps_transform(fun, fresh);
            let arg_cps = cps_transform(arg, fresh);
            let call = Term::app(Term::app(Term::var(&mv), Term::var(&k)), Term::var(&nv));
            let inner = Term::abs(nv, call);
            let arg_k = Term::abs(mv, Term::app(arg_cps, inner));
            Term::abs(k, Term::app(fun_cps, arg_k))
        }
        value => {
            let k = fresh.fresh("k");
            let image = cps_value(value, fresh);
            Term::abs(&k, Term::app(Term::var(&k), image))
        }
    }
}

/// The value translation psi.
pub fn cps_value(v: &Term, fresh: &mut FreshNameSource) -> Term {
    match v {
        Term::Var(_) => v.clone(),
        Term::Abs(x, body) => {
            let k = fresh.fresh("k");
            let body_cps = cps_transform(body, fresh);
            Term::abs(&k, Term::abs(x, Term::app(body_cps, Term::var(&k))))
        }
        Term::App(..) => panic!("cps_value called on an application"),
    }
}

/// Transform with a fresh-name source built from the term itself.
pub fn cps(m: &Term) -> Term {
    let mut fresh = FreshNameSource::avoiding(m);
    cps_transform(m, &mut fresh)
}

/// Capture-avoiding substitution `body[value/x]`.
pub fn subst(body: &Term, x: &str, value: &Term) -> Term {
    let fv = value.free_vars();
    subst_with(body, x, value, &fv)
}

fn subst_with(body: &Term, x: &str, value: &Term, value_fv: &BTreeSet<String>) -> Term {
    match body {
        Term::Var(y) if y == x => value.clone(),
        Term::Var(_) => body.clone(),
        Term::App(f, a) => Term::App(
            Rc::new(subst_with(f, x, value, value_fv)),
            Rc::new(subst_with(a, x, value, value_fv)),
        ),
        Term::Abs(y, b) => {
            if y == x || !b.free_vars().contains(x) {
                body.clone()
            } else if value_fv.contains(y) {
                let mut taken = b.all_names();
                taken.extend(value_fv.iter().cloned());
                taken.insert(x.to_string());
                let mut renamed = format!("{y}'");
                while taken.contains(&renamed) {
                    renamed.push('\'');
                }
                let b = subst(b, y, &Term::var(&renamed));
                Term::abs(renamed, subst_with(&b, x, value, value_fv))
            } else {
                Term::Abs(y.clone(), Rc::new(subst_with(b, x, value, value_fv)))
            }
        }
    }
}

/// Result of bounded call-by-value reduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalOutcome {
    /// Reduction reached a value after `steps` beta steps.
    Value { term: Term, steps: usize },
    /// No rule applies but the term is not a value (free variable in head position).
    Stuck { term: Term, steps: usize },
    /// Fuel ran out before a normal form.
    Diverged,
}

impl EvalOutcome {
    pub fn value(&self) -> Option<&Term> {
        match self {
            EvalOutcome::Value { term, .. } => Some(term),
            _ => None,
        }
    }
}

enum Step {
    Reduced(Term),
    Normal,
}

fn step_cbv(t: &Term) -> Step {
    match t {
        Term::Var(_) | Term::Abs(..) => Step::Normal,
        Term::App(f, a) => {
            if !f.is_value() {
                return match step_cbv(f) {
                    Step::Reduced(f2) => Step::Reduced(Term::App(Rc::new(f2), a.clone())),
                    Step::Normal => Step::Normal,
                };
            }
            if !a.is_value() {
                return match step_cbv(a) {
                    Step::Reduced(a2) => Step::Reduced(Term::App(f.clone(), Rc::new(a2))),
                    Step::Normal => Step::Normal,
                };
            }
            match f.as_ref() {
                Term::Abs(x, body) => Step::Reduced(subst(body, x, a)),
                _ => Step::Normal,
            }
        }
    }
}

/// Leftmost call-by-value small-step reduction with at most `fuel` beta steps.
pub fn eval_cbv(m: &Term, fuel: usize) -> EvalOutcome {
    let mut current = m.clone();
    let mut steps = 0;
    loop {
        if current.is_value() {
            return EvalOutcome::Value {
                term: current,
                steps,
            };
        }
        if steps == fuel {
            return EvalOutcome::Diverged;
        }
        match step_cbv(&current) {
            Step::Reduced(next) => {
                current = next;
                steps += 1;
            }
            Step::Normal => {
                return EvalOutcome::Stuck {
                    term: current,
                    steps,
                }
            }
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Nameless<'a> {
    Bound(usize),
    Free(&'a str),
    Abs(Box<Nameless<'a>>),
    App(Box<Nameless<'a>>, Box<Nameless<'a>>),
}

fn to_nameless<'a>(t: &'a Term, scope: &mut Vec<&'a str>) -> Nameless<'a> {
    match t {
        Term::Var(x) => match scope.iter().rev().position(|y| y == x) {
            Some(i) => Nameless::Bound(i),
            None => Nameless::Free(x),
        },
        Term::Abs(x, b) => {
            scope.push(x);
            let body = to_nameless(b, scope);
            scope.pop();
            Nameless::Abs(Box::new(body))
        }
        Term::App(f, a) => Nameless::App(
            Box::new(to_nameless(f, scope)),
            Box::new(to_nameless(a, scope)),
        ),
    }
}

/// Equality up to consistent renaming of bound variables.
pub fn alpha_eq(a: &Term, b: &Term) -> bool {
    to_nameless(a, &mut Vec::new()) == to_nameless(b, &mut Vec::new())
}

/// Random term generator for property suites.
///
/// Produces closed terms with at most `max_size` nodes when `closed` is set;
/// otherwise free variables are drawn from `x`, `y`, `z`.
pub fn random_term<R: Rng + ?Sized>(rng: &mut R, max_size: usize, closed: bool) -> Term {
    let size = rng.gen_range(1..=max_size.max(1));
    let mut scope = Vec::new();
    if closed {
        // Closed terms need a binder before the first variable.
        let size = size.max(2);
        let param = "v0".to_string();
        scope.push(param.clone());
        let body = gen_sized(rng, size - 1, &mut scope, closed);
        return Term::abs(param, body);
    }
    gen_sized(rng, size, &mut scope, closed)
}

/// Random closed term that is not necessarily a value: an application of
/// two closed subterms when the budget allows.
pub fn random_closed_program<R: Rng + ?Sized>(rng: &mut R, max_size: usize) -> Term {
    if max_size >= 5 && rng.gen_bool(0.8) {
        let left_budget = rng.gen_range(2..=max_size - 3);
        let right_budget = max_size - 1 - left_budget;
        let f = random_closed_program(rng, left_budget);
        let a = random_closed_program(rng, right_budget);
        Term::app(f, a)
    } else {
        random_term(rng, max_size, true)
    }
}

fn gen_sized<R: Rng + ?Sized>(
    rng: &mut R,
    size: usize,
    scope: &mut Vec<String>,
    closed: bool,
) -> Term {
    let pick_var = |rng: &mut R, scope: &Vec<String>| -> Term {
        if scope.is_empty() || (!closed && rng.gen_bool(0.2)) {
            let free = ["x", "y", "z"];
            Term::var(free[rng.gen_range(0..free.len())])
        } else {
            Term::var(scope[rng.gen_range(0..scope.len())].clone())
        }
    };
    if size <= 1 || (closed && scope.is_empty() && size < 2) {
        return pick_var(rng, scope);
    }
    if size == 2 || rng.gen_bool(0.4) {
        let name = format!("v{}", scope.len());
        scope.push(name.clone());
        let body = gen_sized(rng, size - 1, scope, closed);
        scope.pop();
        return Term::abs(name, body);
    }
    let left = rng.gen_range(1..=size - 2);
    let right = size - 1 - left;
    let f = gen_sized(rng, left, scope, closed);
    let a = gen_sized(rng, right, scope, closed);
    Term::app(f, a)
}

/// Outcome of one simulation trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimulationCheck {
    /// Source term did not reach a value within the fuel bound; not counted.
    Skipped,
    Passed,
    Failed {
        term: Term,
        expected: Term,
        got: Option<Term>,
    },
}

/// Check that `([[M]] \z.z)` reduces to a term alpha-equivalent to `psi(V)`
/// whenever `M` reduces to `V` within `fuel` steps. The CPS side gets
/// `20 * steps + 1000` fuel.
pub fn check_simulation(m: &Term, fuel: usize) -> SimulationCheck {
    let (value, steps) = match eval_cbv(m, fuel) {
        EvalOutcome::Value { term, steps } => (term, steps),
        _ => return SimulationCheck::Skipped,
    };
    let mut fresh = FreshNameSource::avoiding(m);
    let transformed = cps_transform(m, &mut fresh);
    let identity = Term::abs("_z", Term::var("_z"));
    let program = Term::app(transformed, identity);
    let mut psi_fresh = FreshNameSource::avoiding(&value);
    let expected = cps_value(&value, &mut psi_fresh);
    match eval_cbv(&program, 20 * steps + 1000) {
        EvalOutcome::Value { term, .. } if alpha_eq(&term, &expected) => SimulationCheck::Passed,
        EvalOutcome::Value { term, .. } => SimulationCheck::Failed {
            term: m.clone(),
            expected,
            got: Some(term),
        },
        _ => SimulationCheck::Failed {
            term: m.clone(),
            expected,
            got: None,
        },
    }
}

/// Aggregate counts from a batch of simulation trials.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct SimulationReport {
    pub checked: usize,
    pub skipped: usize,
    pub failed: usize,
    /// Checked terms whose source reduction took at least one beta step.
    pub reducing: usize,
    pub first_failure: Option<String>,
}

/// Run simulation trials until `trials` normalizing closed terms of size
/// at most `max_size` have been checked (or `10 * trials` draws were made).
pub fn simulation_suite<R: Rng + ?Sized>(
    rng: &mut R,
    trials: usize,
    max_size: usize,
) -> SimulationReport {
    let mut report = SimulationReport::default();
    let mut draws = 0;
    while report.checked < trials && draws < trials.saturating_mul(10) {
        draws += 1;
        let term = random_closed_program(rng, max_size);
        match check_simulation(&term, 1000) {
            SimulationCheck::Skipped => report.skipped += 1,
            SimulationCheck::Passed => {
                report.checked += 1;
                if !term.is_value() {
                    report.reducing += 1;
                }
            }
            SimulationCheck::Failed {
                term,
                expected,
                got,
            } => {
                report.checked += 1;
                report.failed += 1;
                if report.first_failure.is_none() {
                    let got = got.map_or_else(|| "no value".to_string(), |t| t.to_string());
                    report.first_failure = Some(format!("{term}: expected {expected}, got {got}"));
                }
            }
        }
    }
    report
}

/// Give generated binders (`_k0`, `_m1`, ...) plain names: `k`, `m`, then
/// `k1`, `k2`, ... once a name is taken anywhere in the term.
pub fn readable(t: &Term) -> Term {
    fn go(
        t: &Term,
        taken: &mut BTreeSet<String>,
        scope: &mut HashMap<String, Vec<String>>,
    ) -> Term {
        match t {
            Term::Var(x) => match scope.get(x).and_then(|s| s.last()) {
                Some(renamed) => Term::var(renamed.clone()),
                None => t.clone(),
            },
            Term::Abs(x, b) => {
                let name = if x.starts_with('_') {
                    let stem: String = x
                        .trim_start_matches('_')
                        .chars()
                        .filter(|c| !c.is_ascii_digit())
                        .collect();
                    let stem = if stem.is_empty() {
                        "v".to_string()
                    } else {
                        stem
                    };
                    let name = std::iter::once(stem.clone())
                        .chain((1..).map(|i| format!("{stem}{i}")))
                        .find(|n| !taken.contains(n))
                        .expect("unbounded supply");
                    taken.insert(name.clone());
                    name
                } else {
                    x.clone()
                };
                scope.entry(x.clone()).or_default().push(name.clone());
                let body = go(b, taken, scope);
                scope.get_mut(x).map(Vec::pop);
                Term::abs(name, body)
            }
            Term::App(f, a) => {
                let f = go(f, taken, scope);
                Term::app(f, go(a, taken, scope))
            }
        }
    }
    go(t, &mut t.all_names(), &mut HashMap::new())
}

/// Rename every bound variable to a canonical `b<depth>` name.
pub fn canonicalize(t: &Term) -> Term {
    fn go(t: &Term, scope: &mut HashMap<String, Vec<String>>, depth: usize) -> Term {
        match t {
            Term::Var(x) => match scope.get(x).and_then(|s| s.last()) {
                Some(renamed) => Term::var(renamed.clone()),
                None => t.clone(),
            },
            Term::Abs(x, b) => {
                let name = format!("b{depth}");
                scope.entry(x.clone()).or_default().push(name.clone());
                let body = go(b, scope, depth + 1);
                scope.get_mut(x).map(Vec::pop);
                Term::abs(name, body)
            }
            Term::App(f, a) => Term::app(go(f, scope, depth), go(a, scope, depth)),
        }
    }
    go(t, &mut HashMap::new(), 0)
}


#[cfg(test)]
mod suite_tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn simulation_suite_small_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = simulation_suite(&mut rng, 200, 12);
        assert_eq!(report.failed, 0, "{:?}", report.first_failure);
        assert_eq!(report.checked, 200);
        assert!(report.reducing > 100);
    }
}
