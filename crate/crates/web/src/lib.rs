//! Browser bindings: CPS transform, NXP episode evaluation and a practice
//! curve from the stack machine. Results cross the boundary as JSON text.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use nxpvm::lambda_cps::{cps, parse_term, readable};
use nxpvm::nxp_lang::{parse_expr, run_episode, Environment, EpisodeResult, DEFAULT_BUDGET};
use nxpvm::stack_vm::{Learn, Mode, VmConfig, VmSession};

fn parse_env(json: &str) -> Result<Environment, String> {
    if json.trim().is_empty() {
        return Ok(Environment::new());
    }
    serde_json::from_str(json).map_err(|e| format!("environment: {e}"))
}

/// CPS image of a lambda term, with plain names for the new binders.
pub fn cps_text(term: &str) -> Result<String, String> {
    let t = parse_term(term.trim_end())
        .map_err(|e| format!("parse error at offset {}: {}", e.offset, e.message))?;
    Ok(readable(&cps(&t)).to_string())
}

pub fn eval_episode(expr: &str, env_json: &str) -> Result<EpisodeResult, String> {
    let main = parse_expr(expr.trim_end())
        .map_err(|e| format!("parse error at offset {}: {}", e.offset, e.message))?;
    let env = parse_env(env_json)?;
    run_episode(&main, &env, DEFAULT_BUDGET).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize, PartialEq, Eq)]
pub struct PracticePoint {
    pub repetition: usize,
    pub steps: u64,
    pub impasses: u64,
    pub cache_hits: u64,
}

/// Pop counts of `reps` runs of one episode on a chunking machine.
pub fn practice(
    expr: &str,
    env_json: &str,
    reps: usize,
    per_step: bool,
) -> Result<Vec<PracticePoint>, String> {
    let main = parse_expr(expr.trim_end())
        .map_err(|e| format!("parse error at offset {}: {}", e.offset, e.message))?;
    let env = parse_env(env_json)?;
    let mut session = VmSession::new(VmConfig {
        learn: Learn::Chunk,
        mode: if per_step {
            Mode::PerStep
        } else {
            Mode::PerEpisode
        },
        budget: DEFAULT_BUDGET,
    });
    (1..=reps)
        .map(|repetition| {
            let r = session.run(&main, &env).map_err(|e| e.to_string())?;
            Ok(PracticePoint {
                repetition,
                steps: r.step_count,
                impasses: r.impasses,
                cache_hits: r.cache_hits,
            })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("results serialize"))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn cps_term(term: &str) -> Result<String, JsValue> {
    cps_text(term).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn evaluate(expr: &str, env_json: &str) -> Result<String, JsValue> {
    to_js(eval_episode(expr, env_json))
}

#[wasm_bindgen]
pub fn practice_curve(
    expr: &str,
    env_json: &str,
    reps: usize,
    per_step: bool,
) -> Result<String, JsValue> {
    to_js(practice(expr, env_json, reps, per_step))
}
