//! Dynamic memory as a monadic control construct.
//!
//! - [`lambda_cps`]: untyped lambda calculus and the Fischer CPS transform.
//! - [`triples`]: monads in Kleisli form with a randomized law checker.
//! - [`nxp_lang`]: the NXP goal language, evaluated in the N-triple.
//! - [`memory_engine`]: bi-continuation problem solving with pluggable
//!   learning strategies (scripts, chunking, clustering).
//! - [`stack_vm`]: dual-stack machine with skill acquisition, and its
//!   single-stack reduction.
//! - [`trace`]: the JSON-lines trace format.

pub mod lambda_cps;
pub mod memory_engine;
pub mod nxp_lang;
pub mod stack_vm;
pub mod trace;
pub mod triples;
