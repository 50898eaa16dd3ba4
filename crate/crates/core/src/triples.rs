//! Triples (monads) in Kleisli form and a randomized law checker.
//!
//! A [`Triple`] is a record of three operations: `unit`, `star` (bind, with
//! the computation written before the function) and `observe`, which runs a
//! computation against an initial context so that two computations can be
//! compared pointwise. Four instances are provided: identity, state,
//! continuation and the N-triple (state over a goal agenda, plus `post`).

use std::fmt::{self, Debug};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nxp_lang::Expr;

/// State-passing computation `Mem -> (V, Mem)`.
pub struct State<V, M>(Rc<dyn Fn(M) -> (V, M)>);

impl<V, M> Clone for State<V, M> {
    fn clone(&self) -> Self {
        State(Rc::clone(&self.0))
    }
}

impl<V: 'static, M: 'static> State<V, M> {
    pub fn new(f: impl Fn(M) -> (V, M) + 'static) -> Self {
        State(Rc::new(f))
    }

    /// `unit v = \s.(v, s)`
    pub fn unit(v: V) -> Self
    where
        V: Clone,
    {
        State::new(move |s| (v.clone(), s))
    }

    /// `x * k = \s. let (y, a) = x s in k y a`
    pub fn bind<W: 'static>(self, k: impl Fn(V) -> State<W, M> + 'static) -> State<W, M> {
        State::new(move |s| {
            let (y, a) = (self.0)(s);
            k(y).run(a)
        })
    }

    pub fn run(&self, initial: M) -> (V, M) {
        (self.0)(initial)
    }
}

/// Memories that accept evoked goals.
pub trait Agenda {
    fn push_goal(&mut self, goal: Expr);
}

/// The N-triple memory: an ordered sequence of evoked goals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoalAgenda(pub Vec<Expr>);

impl GoalAgenda {
    pub fn new() -> Self {
        GoalAgenda(Vec::new())
    }

    pub fn items(&self) -> &[Expr] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<Expr>> for GoalAgenda {
    fn from(items: Vec<Expr>) -> Self {
        GoalAgenda(items)
    }
}

impl Agenda for GoalAgenda {
    /// Right injection: the goal goes to the tail.
    fn push_goal(&mut self, goal: Expr) {
        self.0.push(goal);
    }
}

impl fmt::Display for GoalAgenda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, "]")
    }
}

/// `post e = \s.((), s + inr(e))`
pub fn post<M: Agenda + 'static>(e: Expr) -> State<(), M> {
    State::new(move |mut s: M| {
        s.push_goal(e.clone());
        ((), s)
    })
}

/// Kleisli arrow `V -> T V`.
pub type Kleisli<V, C> = Rc<dyn Fn(V) -> C>;

/// A triple as first-class data.
pub struct Triple<V, C, Ctx, Obs> {
    pub name: &'static str,
    unit: Rc<dyn Fn(V) -> C>,
    star: Rc<dyn Fn(C, Kleisli<V, C>) -> C>,
    observe: Rc<dyn Fn(&C, &Ctx) -> Obs>,
}

impl<V, C, Ctx, Obs> Clone for Triple<V, C, Ctx, Obs> {
    fn clone(&self) -> Self {
        Triple {
            name: self.name,
            unit: Rc::clone(&self.unit),
            star: Rc::clone(&self.star),
            observe: Rc::clone(&self.observe),
        }
    }
}

impl<V, C, Ctx, Obs> Triple<V, C, Ctx, Obs> {
    pub fn new(
        name: &'static str,
        unit: impl Fn(V) -> C + 'static,
        star: impl Fn(C, Kleisli<V, C>) -> C + 'static,
        observe: impl Fn(&C, &Ctx) -> Obs + 'static,
    ) -> Self {
        Triple {
            name,
            unit: Rc::new(unit),
            star: Rc::new(star),
            observe: Rc::new(observe),
        }
    }

    pub fn unit(&self, v: V) -> C {
        (self.unit)(v)
    }

    pub fn star(&self, x: C, k: Kleisli<V, C>) -> C {
        (self.star)(x, k)
    }

    pub fn observe(&self, x: &C, ctx: &Ctx) -> Obs {
        (self.observe)(x, ctx)
    }

    /// Replace the star operation, keeping unit and observe.
    pub fn with_star(mut self, star: impl Fn(C, Kleisli<V, C>) -> C + 'static) -> Self {
        self.star = Rc::new(star);
        self
    }
}

pub fn identity_triple<V: 'static>() -> Triple<V, V, (), V>
where
    V: Clone,
{
    Triple::new("identity", |v| v, |x, k| k(x), |x: &V, _: &()| x.clone())
}

/// State triple over memory `M`; observe runs on an initial memory.
pub fn state_triple<V, M>() -> Triple<V, State<V, M>, M, (V, M)>
where
    V: Clone + 'static,
    M: Clone + 'static,
{
    Triple::new(
        "state",
        State::unit,
        |x: State<V, M>, k: Kleisli<V, State<V, M>>| x.bind(move |y| k(y)),
        |x: &State<V, M>, s: &M| x.run(s.clone()),
    )
}

/// The N-triple: the state triple with `Mem = Exp*`.
pub fn n_triple<V: Clone + 'static>() -> Triple<V, State<V, GoalAgenda>, GoalAgenda, (V, GoalAgenda)>
{
    Triple {
        name: "n-triple",
        ..state_triple()
    }
}

/// Answer type of the continuation triple.
pub type Answer = i64;

/// A labelled continuation `V -> Answer`, used as the observation context.
#[derive(Clone)]
pub struct Continuation<V> {
    pub label: String,
    f: Rc<dyn Fn(V) -> Answer>,
}

impl<V> Continuation<V> {
    pub fn new(label: impl Into<String>, f: impl Fn(V) -> Answer + 'static) -> Self {
        Continuation {
            label: label.into(),
            f: Rc::new(f),
        }
    }

    pub fn call(&self, v: V) -> Answer {
        (self.f)(v)
    }
}

impl<V> Debug for Continuation<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)
    }
}

/// Computation of the continuation triple: `(V -> Answer) -> Answer`.
pub type ContComp<V> = Rc<dyn Fn(&Continuation<V>) -> Answer>;

/// Continuation triple; observe applies the computation to a continuation.
pub fn continuation_triple<V: Clone + 'static>() -> Triple<V, ContComp<V>, Continuation<V>, Answer>
{
    Triple::new(
        "continuation",
        |v: V| -> ContComp<V> { Rc::new(move |k: &Continuation<V>| k.call(v.clone())) },
        |x: ContComp<V>, f: Kleisli<V, ContComp<V>>| -> ContComp<V> {
            Rc::new(move |k: &Continuation<V>| {
                let outer = k.clone();
                let f = Rc::clone(&f);
                let inner = Continuation::new(outer.label.clone(), move |y: V| f(y)(&outer));
                x(&inner)
            })
        },
        |x: &ContComp<V>, k: &Continuation<V>| x(k),
    )
}

/// Deliberately broken star operations used to validate the law checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// State star runs the continuation on the initial memory, dropping
    /// whatever the first computation did to it.
    DropState,
    /// Star returns its first argument and never calls the continuation.
    SkipBind,
}

impl std::str::FromStr for Mutation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop-state" => Ok(Mutation::DropState),
            "skip-bind" => Ok(Mutation::SkipBind),
            other => Err(format!(
                "unknown mutation '{other}' (expected drop-state or skip-bind)"
            )),
        }
    }
}

fn drop_state_star<V: 'static, M: Clone + 'static>(
    x: State<V, M>,
    k: Kleisli<V, State<V, M>>,
) -> State<V, M> {
    State::new(move |s: M| {
        let (y, _dropped) = x.run(s.clone());
        k(y).run(s)
    })
}

/// A Kleisli arrow with a printable description.
pub struct Arrow<V, C> {
    pub label: String,
    pub f: Kleisli<V, C>,
}

impl<V, C> Clone for Arrow<V, C> {
    fn clone(&self) -> Self {
        Arrow {
            label: self.label.clone(),
            f: Rc::clone(&self.f),
        }
    }
}

impl<V, C> Arrow<V, C> {
    pub fn new(label: impl Into<String>, f: impl Fn(V) -> C + 'static) -> Self {
        Arrow {
            label: label.into(),
            f: Rc::new(f),
        }
    }
}

/// Random sources for one law check.
pub struct LawGenerators<V, C, Ctx> {
    pub value: Box<dyn FnMut(&mut ChaCha8Rng) -> V>,
    pub arrow: Box<dyn FnMut(&mut ChaCha8Rng) -> Arrow<V, C>>,
    pub context: Box<dyn FnMut(&mut ChaCha8Rng) -> Ctx>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Law {
    LeftUnit,
    RightUnit,
    Associativity,
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Law::LeftUnit => "left unit",
            Law::RightUnit => "right unit",
            Law::Associativity => "associativity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawResult {
    pub law: Law,
    pub trials: usize,
    pub failures: usize,
    pub counterexample: Option<String>,
}

impl LawResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawReport {
    pub instance: String,
    pub mutation: Option<Mutation>,
    pub results: Vec<LawResult>,
}

impl LawReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(LawResult::passed)
    }

    pub fn result(&self, law: Law) -> Option<&LawResult> {
        self.results.iter().find(|r| r.law == law)
    }
}

/// Check left unit, right unit and associativity by sampling.
///
/// Each trial draws a value `v`, arrows `f`, `g`, `h` and a context; the
/// computation under test is `x = h(v)`. Both sides of each law are
/// observed in the same context and compared.
pub fn check_laws<V, C, Ctx, Obs>(
    t: &Triple<V, C, Ctx, Obs>,
    gens: &mut LawGenerators<V, C, Ctx>,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> LawReport
where
    V: Clone + Debug + 'static,
    C: Clone + 'static,
    Ctx: Debug,
    Obs: PartialEq + Debug,
{
    let mut results = [Law::LeftUnit, Law::RightUnit, Law::Associativity].map(|law| LawResult {
        law,
        trials: 0,
        failures: 0,
        counterexample: None,
    });
    for _ in 0..trials {
        let v = (gens.value)(rng);
        let f = (gens.arrow)(rng);
        let g = (gens.arrow)(rng);
        let h = (gens.arrow)(rng);
        let ctx = (gens.context)(rng);
        let x = (h.f)(v.clone());

        let left = t.observe(&t.star(t.unit(v.clone()), Rc::clone(&f.f)), &ctx);
        let left_expected = t.observe(&(f.f)(v.clone()), &ctx);
        record(&mut results[0], left, left_expected, || {
            format!("v={v:?} f={} ctx={ctx:?}", f.label)
        });

        let unit = Rc::clone(&t.unit);
        let right = t.observe(&t.star(x.clone(), Rc::new(move |y| unit(y))), &ctx);
        let right_expected = t.observe(&x, &ctx);
        record(&mut results[1], right, right_expected, || {
            format!("x={}({v:?}) ctx={ctx:?}", h.label)
        });

        let star = Rc::clone(&t.star);
        let (ff, gg) = (Rc::clone(&f.f), Rc::clone(&g.f));
        let nested: Kleisli<V, C> = Rc::new(move |y| star(ff(y), Rc::clone(&gg)));
        let assoc_left = t.observe(&t.star(x.clone(), nested), &ctx);
        let assoc_right = t.observe(
            &t.star(t.star(x.clone(), Rc::clone(&f.f)), Rc::clone(&g.f)),
            &ctx,
        );
        record(&mut results[2], assoc_left, assoc_right, || {
            format!(
                "x={}({v:?}) f={} g={} ctx={ctx:?}",
                h.label, f.label, g.label
            )
        });
    }
    LawReport {
        instance: t.name.to_string(),
        mutation: None,
        results: results.to_vec(),
    }
}

fn record<Obs: PartialEq + Debug>(
    result: &mut LawResult,
    lhs: Obs,
    rhs: Obs,
    describe: impl FnOnce() -> String,
) {
    result.trials += 1;
    if lhs != rhs {
        result.failures += 1;
        if result.counterexample.is_none() {
            result.counterexample = Some(format!("{} lhs={lhs:?} rhs={rhs:?}", describe()));
        }
    }
}

/// The four built-in instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Instance {
    Identity,
    State,
    Continuation,
    NTriple,
}

impl Instance {
    pub const ALL: [Instance; 4] = [
        Instance::Identity,
        Instance::State,
        Instance::Continuation,
        Instance::NTriple,
    ];
}

fn small_int(rng: &mut ChaCha8Rng) -> i64 {
    rng.gen_range(-50..=50)
}

fn int_arrow_params(rng: &mut ChaCha8Rng) -> (i64, i64) {
    (rng.gen_range(-3..=3), rng.gen_range(-10..=10))
}

fn identity_generators() -> LawGenerators<i64, i64, ()> {
    LawGenerators {
        value: Box::new(small_int),
        arrow: Box::new(|rng| {
            let (a, b) = int_arrow_params(rng);
            Arrow::new(format!("\\v.{a}*v+{b}"), move |v: i64| {
                v.wrapping_mul(a).wrapping_add(b)
            })
        }),
        context: Box::new(|_| ()),
    }
}

fn counter_state_generators() -> LawGenerators<i64, State<i64, i64>, i64> {
    LawGenerators {
        value: Box::new(small_int),
        arrow: Box::new(|rng| {
            let (a, b) = int_arrow_params(rng);
            match rng.gen_range(0..3) {
                0 => Arrow::new(format!("\\v.unit({a}*v+{b})"), move |v: i64| {
                    State::unit(v.wrapping_mul(a).wrapping_add(b))
                }),
                1 => Arrow::new(format!("\\v.\\s.(v+s, s+{b})"), move |v: i64| {
                    State::new(move |s: i64| (v.wrapping_add(s), s.wrapping_add(b)))
                }),
                _ => Arrow::new(format!("\\v.\\s.({a}*s, v)"), move |v: i64| {
                    State::new(move |s: i64| (s.wrapping_mul(a), v))
                }),
            }
        }),
        context: Box::new(small_int),
    }
}

fn continuation_generators() -> LawGenerators<i64, ContComp<i64>, Continuation<i64>> {
    LawGenerators {
        value: Box::new(small_int),
        arrow: Box::new(|rng| {
            let (a, b) = int_arrow_params(rng);
            match rng.gen_range(0..3) {
                0 => Arrow::new(
                    format!("\\v.\\k.k({a}*v+{b})"),
                    move |v: i64| -> ContComp<i64> {
                        Rc::new(move |k: &Continuation<i64>| {
                            k.call(v.wrapping_mul(a).wrapping_add(b))
                        })
                    },
                ),
                1 => Arrow::new(
                    format!("\\v.\\k.k(v)+k(v+{b})"),
                    move |v: i64| -> ContComp<i64> {
                        Rc::new(move |k: &Continuation<i64>| {
                            k.call(v).wrapping_add(k.call(v.wrapping_add(b)))
                        })
                    },
                ),
                _ => Arrow::new(
                    format!("\\v.\\k.{b}+v (abort)"),
                    move |v: i64| -> ContComp<i64> {
                        Rc::new(move |_: &Continuation<i64>| v.wrapping_add(b))
                    },
                ),
            }
        }),
        context: Box::new(|rng| {
            let (a, b) = int_arrow_params(rng);
            Continuation::new(format!("\\r.{a}*r+{b}"), move |r: i64| {
                r.wrapping_mul(a).wrapping_add(b)
            })
        }),
    }
}

fn goal_atom(i: usize) -> Expr {
    Expr::atom(format!("g{i}"))
}

fn n_triple_generators() -> LawGenerators<bool, State<bool, GoalAgenda>, GoalAgenda> {
    LawGenerators {
        value: Box::new(|rng| rng.gen_bool(0.5)),
        arrow: Box::new(|rng| {
            let goal = goal_atom(rng.gen_range(0..6));
            let c = rng.gen_bool(0.5);
            match rng.gen_range(0..4) {
                0 => Arrow::new(format!("\\v.unit(v&{c})"), move |v: bool| {
                    State::unit(v & c)
                }),
                1 => Arrow::new(format!("\\v.unit(v|{c})"), move |v: bool| {
                    State::unit(v | c)
                }),
                2 => Arrow::new(format!("\\v.post({goal})*unit(!v)"), move |v: bool| {
                    post(goal.clone()).bind(move |_| State::unit(!v))
                }),
                _ => Arrow::new(format!("\\v.post({goal})*unit(v)"), move |v: bool| {
                    post(goal.clone()).bind(move |_| State::unit(v))
                }),
            }
        }),
        context: Box::new(|rng| {
            let len = rng.gen_range(0..4);
            GoalAgenda((0..len).map(|_| goal_atom(rng.gen_range(0..6))).collect())
        }),
    }
}

/// Run the law checker on one built-in instance.
pub fn run_instance(
    instance: Instance,
    trials: usize,
    seed: u64,
    mutation: Option<Mutation>,
) -> LawReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (instance as u64).wrapping_mul(0x9e37_79b9));
    let mut report = match instance {
        Instance::Identity => {
            let mut t = identity_triple::<i64>();
            if mutation == Some(Mutation::SkipBind) {
                t = t.with_star(|x, _| x);
            }
            check_laws(&t, &mut identity_generators(), trials, &mut rng)
        }
        Instance::State => {
            let mut t = state_triple::<i64, i64>();
            match mutation {
                Some(Mutation::DropState) => t = t.with_star(drop_state_star),
                Some(Mutation::SkipBind) => t = t.with_star(|x, _| x),
                None => {}
            }
            check_laws(&t, &mut counter_state_generators(), trials, &mut rng)
        }
        Instance::Continuation => {
            let mut t = continuation_triple::<i64>();
            if mutation == Some(Mutation::SkipBind) {
                t = t.with_star(|x, _| x);
            }
            check_laws(&t, &mut continuation_generators(), trials, &mut rng)
        }
        Instance::NTriple => {
            let mut t = n_triple::<bool>();
            match mutation {
                Some(Mutation::DropState) => t = t.with_star(drop_state_star),
                Some(Mutation::SkipBind) => t = t.with_star(|x, _| x),
                None => {}
            }
            check_laws(&t, &mut n_triple_generators(), trials, &mut rng)
        }
    };
    report.mutation = mutation;
    report
}

/// Laws for all four instances: twelve law/instance pairs.
pub fn run_all(trials: usize, seed: u64, mutation: Option<Mutation>) -> Vec<LawReport> {
    Instance::ALL
        .iter()
        .map(|&i| run_instance(i, trials, seed, mutation))
        .collect()
}
