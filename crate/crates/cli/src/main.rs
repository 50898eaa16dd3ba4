//! `nxpvm`: command-line front end.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nxpvm::lambda_cps::{cps, parse_term, readable, simulation_suite};
use nxpvm::memory_engine::{
    parse_scenario, with_metrics, ChunkStrategy, ClusterStrategy, Engine, ExecutionTrace,
    LearningStrategy, LiftedState, Program, ScriptStrategy, Task,
};
use nxpvm::nxp_lang::{parse_expr, run_episode, Environment, Expr, DEFAULT_BUDGET};
use nxpvm::stack_vm::{
    reduce_to_single, DualStore, Learn, Machine, Mode, SkillItem, VmConfig, VmResult,
};
use nxpvm::trace::{BottomReason, TraceEvent, TraceWriter, VmSummary};
use nxpvm::triples::{run_all, Mutation};

#[derive(Parser)]
#[command(
    name = "nxpvm",
    version,
    about = "Dynamic memory as a monadic control construct"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// CPS-transform a lambda term.
    Cps(CpsArgs),
    /// Evaluate NXP expressions and drain their agendas.
    Eval(EvalArgs),
    /// Run scenario files through the problem-solving engine.
    Run(RunArgs),
    /// Run episodes on the dual-stack machine.
    Vm(VmArgs),
    /// Check the triple laws on all built-in instances.
    Laws(LawsArgs),
}

#[derive(Args)]
struct Common {
    /// Seed for randomized suites.
    #[arg(long, env = "NXPVM_SEED", default_value_t = 0)]
    seed: u64,
    /// Write output here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CpsArgs {
    /// Term to transform; read from standard input if absent.
    term: Option<String>,
    /// Run N random simulation trials instead of (or after) transforming.
    #[arg(long, value_name = "N")]
    check_sim: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Episodes {
    /// Main goal of a single episode.
    expr: Option<String>,
    /// Atom values, e.g. `a=true,b=false`.
    #[arg(long, default_value = "")]
    env: String,
    /// JSON-lines file of episodes `{"main", "env", "budget"}`.
    #[arg(long, conflicts_with = "expr")]
    file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    episodes: Episodes,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyName {
    Script,
    Chunk,
    Cluster,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario files (JSON lines `{"task", "features", "goal", "env"}`).
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = StrategyName::Chunk)]
    strategy: StrategyName,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// New-cluster similarity threshold, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Number of first-look goals taken from the nearest cluster.
    #[arg(long, default_value_t = 3)]
    first_look_k: usize,
    /// Task executions allowed per scenario; defaults to the task count.
    #[arg(long)]
    fuel: Option<usize>,
    /// Run scenarios on a pool of N workers.
    #[arg(long, value_name = "N")]
    parallel: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct VmArgs {
    #[command(flatten)]
    episodes: Episodes,
    #[arg(long, default_value = "per-episode")]
    mode: Mode,
    /// identity, empty, chunk or expect.
    #[arg(long, default_value = "chunk")]
    learn: String,
    /// Run the single expression this many times in one session.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Execute on the single-stack machine.
    #[arg(long)]
    single: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct LawsArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Break the instances on purpose: drop-state or skip-bind.
    #[arg(long)]
    mutate: Option<Mutation>,
    #[command(flatten)]
    common: Common,
}

/// How a command ended, beyond its output.
enum Failure {
    /// Bad input or configuration: exit 2.
    Usage(String),
    /// A property or episode failed: exit 1.
    Failed(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(format!("{e:#}"))
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cps(a) => cmd_cps(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => cmd_run(a),
        Command::Vm(a) => cmd_vm(a),
        Command::Laws(a) => cmd_laws(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(msg)) => {
            if !msg.is_empty() {
                eprintln!("{msg}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn emit(output: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn read_stdin() -> anyhow::Result<String> {
    let mut s = String::new();
    io::stdin()
        .read_to_string(&mut s)
        .context("reading standard input")?;
    Ok(s)
}

fn read_file(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_cps(a: CpsArgs) -> Outcome {
    let mut text = String::new();
    if a.term.is_some() || a.check_sim.is_none() {
        let src = match a.term {
            Some(t) => t,
            None => read_stdin()?,
        };
        let term = parse_term(src.trim_end()).map_err(|e| {
            Failure::Usage(format!("parse error at offset {}: {}", e.offset, e.message))
        })?;
        text.push_str(&format!("{}\n", readable(&cps(&term))));
    }
    let mut failed = false;
    if let Some(n) = a.check_sim {
        let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
        let report = simulation_suite(&mut rng, n, 12);
        failed = report.failed > 0;
        text.push_str(&format!(
            "simulation: {} passed, {} failed, {} skipped\n",
            report.checked - report.failed,
            report.failed,
            report.skipped
        ));
        if let Some(f) = &report.first_failure {
            text.push_str(&format!("first failure: {f}\n"));
        }
    }
    emit(&a.common.output, &text)?;
    if failed {
        return Err(Failure::Failed(String::new()));
    }
    Ok(())
}

fn parse_env(text: &str) -> Result<Environment, Failure> {
    let mut env = Environment::new();
    for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("expected atom=value, got '{pair}'")))?;
        let value = match value.trim() {
            "true" | "t" | "1" => true,
            "false" | "f" | "0" => false,
            other => return Err(Failure::Usage(format!("'{other}' is not a truth value"))),
        };
        env.set(name.trim(), value);
    }
    Ok(env)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeLine {
    main: Expr,
    #[serde(default)]
    env: Environment,
    budget: Option<usize>,
}

struct Episode {
    main: Expr,
    env: Environment,
    budget: usize,
}

fn load_episodes(e: &Episodes) -> Result<Vec<Episode>, Failure> {
    if let Some(path) = &e.file {
        let text = read_file(path)?;
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: EpisodeLine = serde_json::from_str(raw).map_err(|err| {
                Failure::Usage(format!("{}: line {}: {err}", path.display(), i + 1))
            })?;
            out.push(Episode {
                main: line.main,
                env: line.env,
                budget: line.budget.unwrap_or(e.budget),
            });
        }
        return Ok(out);
    }
    let src = match &e.expr {
        Some(s) => s.clone(),
        None => read_stdin()?,
    };
    let main = parse_expr(src.trim_end()).map_err(|err| {
        Failure::Usage(format!(
            "parse error at offset {}: {}",
            err.offset, err.message
        ))
    })?;
    Ok(vec![Episode {
        main,
        env: parse_env(&e.env)?,
        budget: e.budget,
    }])
}

fn check_budget(budget: usize) -> Outcome {
    if budget == 0 {
        return Err(Failure::Usage("budget must be positive".into()));
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    check_budget(a.episodes.budget)?;
    let mut text = String::new();
    for ep in load_episodes(&a.episodes)? {
        check_budget(ep.budget)?;
        let result =
            run_episode(&ep.main, &ep.env, ep.budget).map_err(|e| Failure::Usage(e.to_string()))?;
        text.push_str(&serde_json::to_string(&result).expect("results serialize"));
        text.push('\n');
    }
    emit(&a.common.output, &text)?;
    Ok(())
}

/// Trace and final state of one scenario.
struct ScenarioRun {
    trace: ExecutionTrace,
    bottom: Option<BottomReason>,
}

fn run_with<S: LearningStrategy + 'static>(
    strategy: S,
    tasks: &[Task],
    budget: usize,
    fuel: Option<usize>,
) -> Result<ScenarioRun, String> {
    let Some(program) = Program::sequence(tasks) else {
        return Ok(ScenarioRun {
            trace: Vec::new(),
            bottom: None,
        });
    };
    let engine = Engine::new(strategy, Environment::new()).with_budget(budget);
    let out = engine
        .run(&program, S::Memory::default(), fuel.unwrap_or(tasks.len()))
        .map_err(|e| e.to_string())?;
    Ok(ScenarioRun {
        trace: with_metrics(out.trace()),
        bottom: match out {
            LiftedState::Bottom { reason, .. } => Some(reason),
            LiftedState::Defined { .. } => None,
        },
    })
}

fn cmd_run(a: RunArgs) -> Outcome {
    check_budget(a.budget)?;
    if !(a.threshold > 0.0 && a.threshold <= 1.0) {
        return Err(Failure::Usage("--threshold must be in (0, 1]".into()));
    }
    if a.first_look_k == 0 {
        return Err(Failure::Usage("--first-look-k must be positive".into()));
    }
    if a.parallel == Some(0) {
        return Err(Failure::Usage("--parallel must be positive".into()));
    }
    let mut scenarios = Vec::new();
    for path in &a.scenarios {
        let text = read_file(path)?;
        let tasks = parse_scenario(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        scenarios.push((path.clone(), tasks));
    }

    let run_one = |tasks: &Vec<Task>| match a.strategy {
        StrategyName::Script => run_with(ScriptStrategy, tasks, a.budget, a.fuel),
        StrategyName::Chunk => run_with(ChunkStrategy, tasks, a.budget, a.fuel),
        StrategyName::Cluster => run_with(
            ClusterStrategy {
                threshold: a.threshold,
                k: a.first_look_k,
            },
            tasks,
            a.budget,
            a.fuel,
        ),
    };
    let runs: Vec<Result<ScenarioRun, String>> = match a.parallel {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("starting worker pool")?
            .install(|| scenarios.par_iter().map(|(_, t)| run_one(t)).collect()),
        None => scenarios.iter().map(|(_, t)| run_one(t)).collect(),
    };

    let mut writer = TraceWriter::new(Vec::new());
    let mut exhausted = Vec::new();
    for ((path, _), run) in scenarios.iter().zip(runs) {
        let run = run.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        for (episode, event) in &run.trace {
            writer.emit(*episode, event).context("writing trace")?;
        }
        if run.bottom == Some(BottomReason::FuelExhausted) {
            exhausted.push(path.display().to_string());
        }
    }
    let text = String::from_utf8(writer.into_inner()).expect("trace is UTF-8");
    emit(&a.common.output, &text)?;
    if !exhausted.is_empty() {
        return Err(Failure::Failed(format!(
            "fuel exhausted in {}",
            exhausted.join(", ")
        )));
    }
    Ok(())
}

fn summary(r: &VmResult) -> VmSummary {
    VmSummary {
        value: r.value,
        drained: r.drained.iter().map(|d| d.goal.clone()).collect(),
        step_count: r.step_count,
        impasses: r.impasses,
        cache_hits: r.cache_hits,
        skill_size: r.skill_stack.len(),
        budget_exhausted: r.budget_exhausted,
    }
}

fn cmd_vm(a: VmArgs) -> Outcome {
    check_budget(a.episodes.budget)?;
    if a.repeat == 0 {
        return Err(Failure::Usage("--repeat must be positive".into()));
    }
    let mut episodes = load_episodes(&a.episodes)?;
    if a.episodes.file.is_none() {
        let ep = episodes.remove(0);
        episodes = (0..a.repeat)
            .map(|_| Episode {
                main: ep.main.clone(),
                env: ep.env.clone(),
                budget: ep.budget,
            })
            .collect();
    }
    let learn: Learn = a.learn.parse().map_err(Failure::Usage)?;
    let mut skill: Vec<SkillItem> = Vec::new();
    let mut writer = TraceWriter::new(Vec::new());
    for (i, ep) in episodes.iter().enumerate() {
        check_budget(ep.budget)?;
        let config = VmConfig {
            learn: learn.clone(),
            mode: a.mode,
            budget: ep.budget,
        };
        let initial: Vec<Expr> = skill
            .iter()
            .filter_map(|s| match s {
                SkillItem::Expect { goal } => Some(goal.clone()),
                SkillItem::Chunk { .. } => None,
            })
            .collect();
        let store = DualStore {
            solve: Vec::new(),
            skill: skill.clone(),
        };
        let machine = Machine::start(store, &ep.main, &ep.env, &initial, &config)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let result = if a.single {
            reduce_to_single(machine).run()
        } else {
            machine.run()
        };
        for event in &result.events {
            writer.emit(i, event).context("writing trace")?;
        }
        writer
            .emit(i, &TraceEvent::VmEnd(summary(&result)))
            .context("writing trace")?;
        skill = result.skill_stack;
    }
    let text = String::from_utf8(writer.into_inner()).expect("trace is UTF-8");
    emit(&a.common.output, &text)?;
    Ok(())
}

#[derive(Serialize)]
struct LawsOutput<'a> {
    seed: u64,
    trials: usize,
    reports: &'a [nxpvm::triples::LawReport],
}

fn cmd_laws(a: LawsArgs) -> Outcome {
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be positive".into()));
    }
    let reports = run_all(a.trials, a.common.seed, a.mutate);
    let mut text = String::new();
    let mut failures = 0;
    for report in &reports {
        for r in &report.results {
            let status = if r.passed() { "pass" } else { "FAIL" };
            text.push_str(&format!(
                "{status} {:<13} {:<14} {}/{} trials failed\n",
                report.instance,
                r.law.to_string(),
                r.failures,
                r.trials
            ));
            if let Some(c) = &r.counterexample {
                text.push_str(&format!("     counterexample: {c}\n"));
            }
            if !r.passed() {
                failures += 1;
            }
        }
    }
    let json = LawsOutput {
        seed: a.common.seed,
        trials: a.trials,
        reports: &reports,
    };
    text.push_str(&serde_json::to_string(&json).expect("reports serialize"));
    text.push('\n');
    emit(&a.common.output, &text)?;
    if failures > 0 {
        return Err(Failure::Failed(format!("{failures} law checks failed")));
    }
    Ok(())
}
