//! JSON-lines trace format shared by the engine and the stack machine.
//!
//! Every line is one object `{"seq", "episode", "kind", "payload"}` with
//! `seq` strictly increasing from 0.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::nxp_lang::{EvalEvent, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiTrigger {
    /// Applied by the unexpected continuation.
    Unexpected,
    /// Applied on the expected path at the end of an episode.
    EpisodeEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottomReason {
    FuelExhausted,
    ReachedOmega,
}

/// One observable event. Serialized with `kind` as the tag and the
/// remaining fields under `payload`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum TraceEvent {
    TaskStart {
        task: String,
    },
    Expectation {
        goals: Vec<Expr>,
    },
    CacheHit {
        answer: bool,
    },
    Eval(EvalEvent),
    TaskEnd {
        task: String,
        answer: bool,
        steps: u64,
    },
    Unexpected {
        flag: bool,
    },
    Phi {
        strategy: String,
        trigger: PhiTrigger,
    },
    Bottom {
        reason: BottomReason,
    },
    Push {
        item: String,
    },
    Pop {
        item: String,
    },
    AddBottom {
        item: String,
    },
    Learn {
        skill_size: usize,
    },
    Merge {
        solve: usize,
        skill: usize,
    },
    VmEnd(VmSummary),
    Metrics(EpisodeMetrics),
}

/// End-of-episode line of the stack machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmSummary {
    pub value: bool,
    pub drained: Vec<Expr>,
    pub step_count: u64,
    pub impasses: u64,
    pub cache_hits: u64,
    pub skill_size: usize,
    pub budget_exhausted: bool,
}

/// Per-episode summary line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub answer: Option<bool>,
    pub steps: u64,
    pub unexpected: bool,
    pub phi_invoked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLine {
    pub seq: u64,
    pub episode: usize,
    pub kind: String,
    pub payload: Value,
}

impl TraceLine {
    pub fn new(seq: u64, episode: usize, event: &TraceEvent) -> TraceLine {
        let value = serde_json::to_value(event).expect("trace events always serialize");
        let kind = value
            .get("kind")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let payload = value.get("payload").cloned().unwrap_or(Value::Null);
        TraceLine {
            seq,
            episode,
            kind,
            payload,
        }
    }

    pub fn event(&self) -> serde_json::Result<TraceEvent> {
        let mut obj = serde_json::Map::new();
        obj.insert("kind".into(), Value::String(self.kind.clone()));
        if !self.payload.is_null() {
            obj.insert("payload".into(), self.payload.clone());
        }
        serde_json::from_value(Value::Object(obj))
    }
}

/// Writes trace lines with a running sequence number.
pub struct TraceWriter<W: Write> {
    out: W,
    seq: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out, seq: 0 }
    }

    pub fn emit(&mut self, episode: usize, event: &TraceEvent) -> io::Result<()> {
        let line = TraceLine::new(self.seq, episode, event);
        self.seq += 1;
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")
    }

    pub fn emitted(&self) -> u64 {
        self.seq
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
